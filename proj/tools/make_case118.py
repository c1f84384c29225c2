#!/usr/bin/env python3
"""Writes fixtures/case118.json and fixtures/profile24.json.

Base data is the standard IEEE 118-bus case as shipped with pypower. On top of it:
  * branches 3-9 take the reactances and capacities of the study table (every
    other branch gets 9900 MW, i.e. effectively unlimited);
  * generators G2-G6 take the study's capacities and cost terms;
  * an industrial load at bus 9 and a tie from bus 10 to bus 37 make line 7
    (8-9) the congestion-prone corridor. Without them buses 9-10 form a radial
    spur and line 7 can never carry more than G5's output.
Transformer taps are dropped. Bus shunts become constant reactive load at 1 p.u.
(the model has no shunt devices).

Run from the repository root: python3 tools/make_case118.py
"""

import json
import pathlib

from pypower.case118 import case118

ROOT = pathlib.Path(__file__).resolve().parent.parent

STUDY_BRANCHES = {  # id: (from, to, capacity MW, x p.u.)
    3: (4, 5, 800, 0.1080),
    4: (3, 5, 700, 0.0540),
    5: (5, 6, 1000, 0.0208),
    6: (6, 7, 800, 0.0305),
    7: (8, 9, 580, 0.0267),
    8: (8, 5, 770, 0.0322),
    9: (9, 10, 700, 0.0688),
}
STUDY_GENERATORS = {  # id: (bus, p_max, cost_a, cost_b)
    2: (4, 300, 0.24, 3.0),
    3: (6, 100, 0.225, 1.2),
    4: (8, 300, 0.125, 1.0),
    5: (10, 550, 0.185, 1.2),
    6: (12, 185, 0.9, 1.0),
}
INDUSTRIAL_BUS, INDUSTRIAL_P, INDUSTRIAL_Q = 9, 1160.0, 116.0
TIE = {"from": 10, "to": 37, "r": 0.001, "x": 0.01, "charging": 0.3}

# Hourly scaling of every load; evening peak at hour 18.
PROFILE = [
    0.66, 0.63, 0.61, 0.60, 0.61, 0.65, 0.72, 0.80, 0.86, 0.91, 0.92, 0.93,
    0.92, 0.91, 0.88, 0.91, 0.93, 0.96, 1.00, 0.98, 0.94, 0.87, 0.78, 0.71,
]


def num(v):
    v = float(v)
    return int(v) if v.is_integer() else round(v, 6)


def build():
    c = case118()
    kinds = {1: "pq", 2: "pv", 3: "slack"}
    vg = {int(g[0]): float(g[5]) for g in c["gen"]}
    buses = []
    for b in c["bus"]:
        bid = int(b[0])
        load_p, load_q = float(b[2]) - float(b[4]), float(b[3]) - float(b[5])
        if bid == INDUSTRIAL_BUS:
            load_p += INDUSTRIAL_P
            load_q += INDUSTRIAL_Q
        buses.append({
            "id": bid, "kind": kinds[int(b[1])], "v_set": num(vg.get(bid, 1.0)),
            "load_p": num(load_p), "load_q": num(load_q), "v_min": num(b[12]), "v_max": num(b[11]),
        })

    branches = []
    for k, br in enumerate(c["branch"], start=1):
        rec = {"id": k, "from": int(br[0]), "to": int(br[1]), "r": num(br[2]), "x": num(br[3]),
               "charging": num(br[4]), "capacity": 9900}
        if k in STUDY_BRANCHES:
            f, t, cap, x = STUDY_BRANCHES[k]
            assert (rec["from"], rec["to"]) == (f, t), k
            rec["capacity"], rec["x"] = cap, x
        branches.append(rec)
    branches.append({"id": len(branches) + 1, **TIE, "capacity": 9900})

    gens = []
    for k, (g, cost) in enumerate(zip(c["gen"], c["gencost"]), start=1):
        rec = {"id": k, "bus": int(g[0]), "p_min": num(g[9]), "p_max": num(g[8]), "q_min": num(g[4]),
               "q_max": num(g[3]), "cost_a": num(cost[4]), "cost_b": num(cost[5]), "cost_c": num(cost[6])}
        if k in STUDY_GENERATORS:
            bus, pmax, a, b = STUDY_GENERATORS[k]
            assert rec["bus"] == bus, k
            rec.update(p_max=pmax, cost_a=a, cost_b=b)
        gens.append(rec)

    return {"base_mva": 100, "buses": buses, "branches": branches, "generators": gens, "load_profile": PROFILE}


def dump(case):
    """One record per line so fixture diffs stay readable."""
    def block(name, rows):
        body = ",\n".join("    " + json.dumps(r) for r in rows)
        return f'  "{name}": [\n{body}\n  ]'
    parts = ['  "base_mva": %s' % json.dumps(case["base_mva"])]
    parts += [block(k, case[k]) for k in ("buses", "branches", "generators")]
    parts.append('  "load_profile": ' + json.dumps(case["load_profile"]))
    return "{\n" + ",\n".join(parts) + "\n}\n"


def main():
    case = build()
    (ROOT / "fixtures" / "case118.json").write_text(dump(case))
    (ROOT / "fixtures" / "profile24.json").write_text(json.dumps({"load_profile": PROFILE}) + "\n")


if __name__ == "__main__":
    main()
