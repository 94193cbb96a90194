#!/usr/bin/env python3
"""Generate configs/furnace_surrogate.json.

A fixed-seed random 2x2 plant closed under the four-state furnace controller.
Signals are deviations from the operating point: outputs in degC and % O2,
inputs in surrogate units. The input boxes are the furnace boxes' relative
half-widths applied to the peak input of the loop controller on the
collection reference.
"""

import argparse
import json
from pathlib import Path

import numpy as np

SEED = 20240612

AC = np.diag([0.0, 1.0, 0.0, 1.0])
BC = np.array([[0, 0.3260], [0, 0.0802], [0.6250, 0], [0.2990, 0]])
CC = np.array([[1, 1, 0, 0], [0, 0, 1, 1]])
DC = np.zeros((2, 2))

# Furnace input ranges (m3/h): gas [24000, 34000], air [2100, 3100].
BOX_RELATIVE = np.array([5000 / 29000, 500 / 2600])


def mat(m):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return {"rows": m.shape[0], "cols": m.shape[1], "data": m.round(6).tolist()}


def closed_loop_matrix(a, b, c):
    return np.block([[a, b @ CC], [-BC @ c, AC]])


def random_plant(rng):
    while True:
        a = rng.standard_normal((4, 4))
        a *= rng.uniform(0.85, 0.95) / max(abs(np.linalg.eigvals(a)))
        b = 0.3 * rng.standard_normal((4, 2))
        c = 0.3 * rng.standard_normal((2, 4))
        # The controller pairs gas with the O2 error and air with the temperature error.
        dc = c @ np.linalg.solve(np.eye(4) - a, b)
        if dc[1, 0] <= 0.2 or dc[0, 1] <= 0.2:
            continue
        a_cl = closed_loop_matrix(a, b, c)
        if max(abs(np.linalg.eigvals(a_cl))) < 0.97:
            return a, b, c


def simulate(a, b, c, r):
    x = np.zeros(4)
    xc = np.zeros(4)
    u_hist = []
    for t in range(r.shape[1]):
        y = c @ x
        u = CC @ xc
        u_hist.append(u)
        xc = AC @ xc + BC @ (r[:, t] - y)
        x = a @ x + b @ u
    return np.array(u_hist).T


def collection_reference():
    return [
        {"kind": "staircase", "period": 500, "duty": 0.6, "levels": [-4, -2, 0, 2, 4]},
        {"kind": "staircase", "period": 700, "duty": 0.6, "levels": [0.7, 0, -0.7, 0.35]},
    ]


def staircase(period, duty, levels, length):
    high = round(duty * period)
    one = np.concatenate([np.r_[np.full(high, v), np.full(period - high, -v)] for v in levels])
    return np.resize(one, length)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "configs" / "furnace_surrogate.json")
    args = parser.parse_args()

    rng = np.random.default_rng(SEED)
    a, b, c = random_plant(rng)
    length = 5000
    r = np.vstack([staircase(p["period"], p["duty"], p["levels"], length) for p in collection_reference()])
    u_peak = np.abs(simulate(a, b, c, r)).max(axis=1)
    u_box = (1.0 + BOX_RELATIVE) * u_peak

    cfg = {
        "schema_version": 1,
        "name": "furnace_surrogate",
        "description": "Synthetic fixed-seed 2x2 plant under the four-state furnace controller; "
        "generated by tools/make_furnace_surrogate.py. Not a model of the furnace.",
        "plant": {"A": mat(a), "B": mat(b), "C": mat(c), "D": mat(np.zeros((2, 2)))},
        "controller": {"Ac": mat(AC), "Bc": mat(BC), "Cc": mat(CC), "Dc": mat(DC)},
        "noise": {"snr_db": [30], "kalman_qw": 0.01},
        "collection": {"length": length, "reference": collection_reference()},
        "horizons": {"past": 70, "future": 70},
        "task": {
            "steps": 120,
            "q": [1e-4, 5e-3],
            "r": [1e-5, 1e-5],
            "reference": [
                {"kind": "square", "period": 60, "duty": 0.5, "amplitude": 1},
                {"kind": "constant", "value": 0},
            ],
            "warmup_reference": [0, 0],
            "u_min": (-u_box).round(6).tolist(),
            "u_max": u_box.round(6).tolist(),
        },
        "variants": ["loop", "spc", "ddpc_iv"],
        "replicates": 10,
        "base_seed": SEED,
    }
    args.out.write_text(json.dumps(cfg, indent=1) + "\n")
    print(f"wrote {args.out}; closed-loop spectral radius "
          f"{max(abs(np.linalg.eigvals(closed_loop_matrix(a, b, c)))):.4f}")


if __name__ == "__main__":
    main()
