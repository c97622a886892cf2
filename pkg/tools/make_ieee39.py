"""Regenerate the bundled New England 39-bus dataset.

Topology, line reactances, loads, dispatch and generator inertia constants
follow the public New England test system. The derived quantities are

    S = 150 MVA system base, k = S / 100
    M_i = H_i / (30 k) on generator buses, 0.1 elsewhere
    b_ij = 0.1 / (k x_ij)
    E_i = 0.04 * sum_j b_ij  (+ 0.1 * P_gen,i / S on generator buses)
    p_i(0) = (P_gen,i - P_load,i) / S

Bus 31 is the slack; its dispatch balances the injections exactly. The line
stiffness is scaled down from 1/x so that a 20 ms explicit Euler prediction
of the network stays stable.

Usage: python3 tools/make_ieee39.py [output_dir]
"""

import json
import sys
from pathlib import Path

BRANCHES = [
    (1, 2, 0.0411), (1, 39, 0.0250), (2, 3, 0.0151), (2, 25, 0.0086), (2, 30, 0.0181),
    (3, 4, 0.0213), (3, 18, 0.0133), (4, 5, 0.0128), (4, 14, 0.0129), (5, 6, 0.0026),
    (5, 8, 0.0112), (6, 7, 0.0092), (6, 11, 0.0082), (6, 31, 0.0250), (7, 8, 0.0046),
    (8, 9, 0.0363), (9, 39, 0.0250), (10, 11, 0.0043), (10, 13, 0.0043), (10, 32, 0.0200),
    (12, 11, 0.0435), (12, 13, 0.0435), (13, 14, 0.0101), (14, 15, 0.0217), (15, 16, 0.0094),
    (16, 17, 0.0089), (16, 19, 0.0195), (16, 21, 0.0135), (16, 24, 0.0059), (17, 18, 0.0082),
    (17, 27, 0.0173), (19, 20, 0.0138), (19, 33, 0.0142), (20, 34, 0.0180), (21, 22, 0.0140),
    (22, 23, 0.0096), (22, 35, 0.0143), (23, 24, 0.0350), (23, 36, 0.0272), (25, 26, 0.0323),
    (25, 37, 0.0232), (26, 27, 0.0147), (26, 28, 0.0474), (26, 29, 0.0625), (28, 29, 0.0151),
    (29, 38, 0.0156),
]
LOAD_MW = {
    3: 322.0, 4: 500.0, 7: 233.8, 8: 522.0, 12: 7.5, 15: 320.0, 16: 329.0, 18: 158.0,
    20: 628.0, 21: 274.0, 23: 247.5, 24: 308.6, 25: 224.0, 26: 139.0, 27: 281.0, 28: 206.0,
    29: 283.5, 31: 9.2, 39: 1104.0,
}
GEN_MW = {30: 250.0, 32: 650.0, 33: 632.0, 34: 508.0, 35: 650.0, 36: 560.0, 37: 540.0, 38: 830.0, 39: 1000.0}
H = {30: 42.0, 31: 30.3, 32: 35.8, 33: 28.6, 34: 26.0, 35: 34.8, 36: 26.4, 37: 24.3, 38: 34.5, 39: 500.0}
SLACK = 31

STIFFNESS = 0.1
LINE_DAMPING = 0.04
GOV_DAMPING = 0.1
M_LOAD = 0.1
BASE_MVA = 150.0

CONTROLLED = [3, 7, 25, 30, 31, 32, 37]
MONITORED = [30, 31, 32, 37]
REGIONS = [[1, 2, 3, 25, 26, 30, 37], [5, 6, 7, 11, 31], [10, 11, 13, 32]]


def build():
    gen = dict(GEN_MW)
    gen[SLACK] = round(sum(LOAD_MW.values()) - sum(gen.values()), 6)
    k = BASE_MVA / 100.0
    b = {(a, c): STIFFNESS / (k * x) for a, c, x in BRANCHES}
    bsum = {i: 0.0 for i in range(1, 40)}
    for (a, c), v in b.items():
        bsum[a] += v
        bsum[c] += v
    nodes = []
    for i in range(1, 40):
        E = LINE_DAMPING * bsum[i] + GOV_DAMPING * gen.get(i, 0.0) / BASE_MVA
        M = H[i] / (30.0 * k) if i in H else M_LOAD
        p0 = (gen.get(i, 0.0) - LOAD_MW.get(i, 0.0)) / BASE_MVA
        nodes.append({"id": i, "M": round(M, 12), "E": round(E, 12), "p0": round(p0, 12)})
    # rounding may leave a residue; push it into the slack bus
    resid = sum(nd["p0"] for nd in nodes)
    nodes[SLACK - 1]["p0"] = round(nodes[SLACK - 1]["p0"] - resid, 12)
    edges = [{"from": a, "to": c, "b": round(v, 12)} for (a, c), v in b.items()]
    network = {
        "name": "ieee39",
        "notes": __doc__.strip().splitlines()[0:12],
        "nodes": nodes,
        "edges": edges,
        "controlled": CONTROLLED,
        "monitored": MONITORED,
    }
    partition = {"regions": REGIONS}
    weights = {str(i): (4.0 if i in MONITORED else 1.0) for i in CONTROLLED}
    scenario = {
        "network": "ieee39.json",
        "partition": "ieee39_partition.json",
        "schedules": [{"period": 1.0, "offset": 0.0} for _ in REGIONS],
        "penalties": [100.0 for _ in REGIONS],
        "mpc": {
            "weights": weights,
            "epsilon": 1.9,
            "filter_tau": 0.5,
            "lower": -0.2,
            "upper": 0.2,
            "penalty_d": 100.0,
            "horizon": 2.0,
            "step": 0.02,
        },
        "safety": {
            "lower": -0.2,
            "upper": 0.2,
            "lower_thr": -0.1,
            "upper_thr": 0.1,
            "gamma_lower": 1.0,
            "gamma_upper": 1.0,
        },
        "disturbance": {
            "kind": "load-ramp",
            "amplitude": 0.2,
            "ramp": 25.0,
            "hold": 125.0,
            "end": 150.0,
            "buses": list(range(1, 30)),
        },
        "t_end": 200.0,
        "h": 0.001,
        "record_stride": 10,
        "outputs": {"trace": "trace.csv", "metrics": "metrics.json"},
    }
    return network, partition, scenario


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    out = Path(argv[0]) if argv else Path(__file__).resolve().parents[1] / "src" / "gridfreq" / "data"
    out.mkdir(parents=True, exist_ok=True)
    network, partition, scenario = build()
    for name, obj in (("ieee39.json", network), ("ieee39_partition.json", partition), ("ieee39_scenario.json", scenario)):
        (out / name).write_text(json.dumps(obj, indent=1) + "\n")
        print(out / name)


if __name__ == "__main__":
    main()
