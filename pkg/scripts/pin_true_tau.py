"""Large-sample values of the true treatment effect for both continuous designs.

Written without importing the package so the pinned numbers are an
independent oracle. The longitudinal inner expectation over Y1 is evaluated by
Gauss-Hermite quadrature.

    python3 scripts/pin_true_tau.py --draws 10000000
"""

import argparse

import numpy as np


def expit(u):
    return 1.0 / (1.0 + np.exp(-u))


def draw_z(rng, m):
    x = rng.normal(0.25, 1.0, size=(m, 4))
    z4 = (x ** 2 + 2 * np.sin(x) - 1.5) / np.sqrt(2)
    x5 = rng.binomial(1, 0.5, size=m)
    return z4, x5


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--draws", type=int, default=10 ** 7)
    ap.add_argument("--seed", type=int, default=987654321)
    ap.add_argument("--chunk", type=int, default=500_000)
    args = ap.parse_args()

    nodes, weights = np.polynomial.hermite_e.hermegauss(60)
    weights = weights / weights.sum()
    rng = np.random.default_rng(args.seed)
    acc = {"cross": [0.0, 0.0], "long": [0.0, 0.0]}
    done = 0
    while done < args.draws:
        m = min(args.chunk, args.draws - done)
        z4, x5 = draw_z(rng, m)
        s4 = z4.sum(axis=1)
        s = s4 + x5
        # one follow-up: treated responders contribute the arm difference S/6
        v = expit(s / 6) * s / 6
        acc["cross"][0] += v.sum()
        acc["cross"][1] += (v ** 2).sum()
        # two follow-ups: Y1 | treated ~ N(S/2, 1)
        y1 = s[:, None] / 2 + nodes[None, :]
        p2 = expit((s[:, None] + 0.1 * y1) / 6)
        stay = p2 * (s[:, None] + y1)                 # treated mean 3 (S + Y1) / 3
        drop = (1 - p2) * 2 * (s[:, None] + y1) / 3   # control mean given H_1
        control = 2 * (s + s / 3) / 3                  # control mean given X
        v = expit(5 * s4 / 9) * ((stay + drop) @ weights - control)
        acc["long"][0] += v.sum()
        acc["long"][1] += (v ** 2).sum()
        done += m
    for k, (s1, s2) in acc.items():
        mean = s1 / args.draws
        se = np.sqrt(s2 / args.draws - mean ** 2) / np.sqrt(args.draws)
        print(f"{k}: tau = {float(mean)!r}  mc_se = {float(se)!r}")


if __name__ == "__main__":
    main()
