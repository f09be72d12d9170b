"""Cyber-physical microservice assembly pipeline.

Product structural model -> platform-independent assembly process ->
service binding against a resource directory -> execution on a simulated
assembly platform.
"""

from importlib.resources import files

__version__ = "0.1.0"


def data_path(name: str) -> str:
    """Path of a bundled fixture, e.g. ``data_path("gregor.ttl")``."""
    return str(files(__name__) / "data" / name)
