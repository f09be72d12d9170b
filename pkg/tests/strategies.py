"""Hypothesis strategies for random but valid product models."""

from hypothesis import strategies as st

HEADER = "@prefix psmm: <http://purl.org/net/metamodels/PSMM#> .\n@prefix : <urn:r#> .\n"
TYPES = ["placement", "insertion", "screw-fit", "snap", "hold"]


def _pair(a, b, k):
    return (
        f"[ psmm:endA [ psmm:part :{a} ; psmm:feature \"f{k}\" ] ; "
        f"psmm:endB [ psmm:part :{b} ; psmm:feature \"g{k}\" ] ]"
    )


@st.composite
def product_models(draw, max_subs=3, max_parts=4):
    """A root with one master and up to ``max_subs - 1`` branch
    sub-assemblies, each a flat set of primitive parts joined by random
    liaisons, plus joining liaisons at the root. Returns turtle text."""
    n_subs = draw(st.integers(1, max_subs))
    lines = [HEADER]
    subs = []
    counter = [0]

    def liaison(owner_lines, a, b, extra=""):
        counter[0] += 1
        lid = f"L{counter[0]}"
        order = draw(st.integers(0, 3))
        ltype = draw(st.sampled_from(TYPES))
        npairs = draw(st.integers(1, 2))
        pairs = ", ".join(_pair(a, b, f"{counter[0]}_{k}") for k in range(npairs))
        owner_lines.append(f':{lid} a psmm:SelfDefinedLiaison ; psmm:order {order} ; psmm:liaisonType "{ltype}" ; psmm:pair {pairs} .')
        return lid

    body = []
    for s in range(1, n_subs + 1):
        n = draw(st.integers(2, max_parts))
        parts = [f"P{s}_{i}" for i in range(n)]
        owned = []
        # spanning chain keeps every part connected, extras add ties and rule-2a groups
        for i in range(1, n):
            j = draw(st.integers(0, i - 1))
            owned.append(liaison(body, parts[j], parts[i]))
        for _ in range(draw(st.integers(0, 2))):
            i, j = draw(st.lists(st.integers(0, n - 1), min_size=2, max_size=2, unique=True))
            owned.append(liaison(body, parts[i], parts[j]))
        if draw(st.booleans()):
            counter[0] += 1
            hid = f"L{counter[0]}"
            body.append(f":{hid} a psmm:HiDclRealisedLiaison ; psmm:order 9 .")
            owned.append(hid)
        lines.append(f":S{s} a psmm:CompositePart ; psmm:hasPart {', '.join(':' + p for p in parts)} ; psmm:hasLiaison {', '.join(':' + l for l in owned)} .")
        lines += [f":{p} a psmm:PrimitivePart ." for p in parts]
        subs.append((f"S{s}", parts))

    root_owned = []
    for s in range(2, n_subs + 1):
        target = draw(st.integers(1, s - 1))
        a = draw(st.sampled_from(subs[target - 1][1]))
        b = draw(st.sampled_from(subs[s - 1][1]))
        root_owned.append(liaison(body, a, b))
        if draw(st.booleans()):
            root_owned.append(liaison(body, a, b))

    designations = [f'psmm:masterSubAssembly [ psmm:of :S1 ; psmm:basePart :{subs[0][1][0]} ]']
    for name, parts in subs[1:]:
        if draw(st.booleans()):
            designations.append(f"psmm:branchSubAssembly [ psmm:of :{name} ; psmm:basePart :{parts[0]} ]")
    root = f":R a psmm:CompositePart ; psmm:hasPart {', '.join(':' + s for s, _ in subs)}"
    if root_owned:
        root += f" ; psmm:hasLiaison {', '.join(':' + l for l in root_owned)}"
    root += " ; " + " ; ".join(designations) + " ."
    lines.insert(1, root)
    return "\n".join(lines + body) + "\n"
