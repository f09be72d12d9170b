"""EXECUTE round-trip times over many seeded Gregor runs.

Prints per worker/service order statistics and optionally writes all raw
samples as CSV. Absolute values reflect the scenario's configured latencies
and link delays, not any physical cell.
"""

import argparse
import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from cpusiot import data_path
from cpusiot.binder import BindingMode, bind
from cpusiot.platform_sim import load_scenario
from cpusiot.process import generate_pim
from cpusiot.product import parse_product_model
from cpusiot.runtime import METRICS_HEADER, rtt_report, run


@dataclass
class Experiment:
    runs: int = 50
    first_seed: int = 0
    mode: BindingMode = BindingMode.STATIC
    style: str = "orchestration"
    csv_out: Optional[Path] = None


def main(exp: Experiment) -> None:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = parse_product_model(Path(data_path("gregor.ttl")).read_text())
    pim = generate_pim(model)
    samples, makespans = [], []
    for seed in range(exp.first_seed, exp.first_seed + exp.runs):
        platform = load_scenario(data_path("gregor_scenario.yaml"), seed=seed)
        psm = bind(pim, platform.registry, exp.mode, platform.topology())
        report = run(psm, platform, exp.style)
        report.raise_for_outcome()
        samples += report.rtt_samples
        makespans.append(max(e.end for e in report.trace))

    print(f"{exp.runs} runs, {len(samples)} EXECUTE samples, makespan {min(makespans)}..{max(makespans)} us")
    print(f"{'service':<26}{'n':>5}{'min':>9}{'p50':>9}{'p95':>9}{'max':>9}")
    for key, s in rtt_report(samples).items():
        print(f"{key:<26}{s['count']:>5}{s['min']:>9.0f}{s['p50']:>9.0f}{s['p95']:>9.0f}{s['max']:>9.0f}")
    if exp.csv_out:
        with open(exp.csv_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            w.writerows((s.step_id, s.task_id, s.service, s.endpoint, s.rtt_us, s.outcome) for s in samples)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=50)
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--mode", choices=[m.value for m in BindingMode], default="static")
    ap.add_argument("--style", choices=["orchestration", "choreography"], default="orchestration")
    ap.add_argument("--csv", type=Path)
    a = ap.parse_args()
    main(Experiment(a.runs, a.first_seed, BindingMode(a.mode), a.style, a.csv))
