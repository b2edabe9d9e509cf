#!/usr/bin/env python3
"""
Rebuild src/data/tw1_quantiles.csv

Solves Painleve II, q'' = s q + 2 q^3, for the Hastings-McLeod solution
(q ~ Ai(s) as s -> +inf) backward from a large starting point, then forms

    F1(s) = exp(-1/2 * [ int_s^inf q(x) dx + int_s^inf (x - s) q(x)^2 dx ])

and inverts it at the requested probabilities. Both integrals are carried
as extra ODE states so one backward pass gives F1 on the whole grid.

Usage:
    python3 scripts/generate_tw1_table.py [--out PATH] [--digits 4]
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import integrate, optimize, special

DEFAULT_OUT = Path(__file__).resolve().parent.parent / "src" / "data" / "tw1_quantiles.csv"
PROBABILITIES = (0.01, 0.05, 0.10, 0.30, 0.50, 0.70, 0.90, 0.95, 0.99)

S_START = 8.0
S_STOP = -8.0


def _rhs(s, y):
    # y = [q, q', I1, I2, I3] where I1 = int_s^inf q, I2 = int_s^inf q^2, I3 = int_s^inf x q^2
    q, dq = y[0], y[1]
    return [dq, s * q + 2.0 * q ** 3, -q, -q * q, -s * q * q]


def _initial_state():
    ai, aip, _, _ = special.airy(S_START)
    # Tails beyond S_START are below 1e-12 and are dropped.
    return [ai, aip, 0.0, 0.0, 0.0]


def solve_f1():
    """Return a callable F1(s) on [S_STOP, S_START]"""
    sol = integrate.solve_ivp(_rhs, (S_START, S_STOP), _initial_state(), method="DOP853",
                              rtol=1e-13, atol=1e-15, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"Painleve II integration failed: {sol.message}")

    def f1(s: float) -> float:
        _, _, i1, i2, i3 = sol.sol(s)
        # int_s^inf (x - s) q^2 = I3 - s * I2
        return float(np.exp(-0.5 * (i1 + i3 - s * i2)))

    return f1


def build_table(probabilities=PROBABILITIES, digits: int = 4) -> pd.DataFrame:
    f1 = solve_f1()
    quantiles = [optimize.brentq(lambda s, p=p: f1(s) - p, S_STOP, S_START - 1.0, xtol=1e-12)
                 for p in probabilities]
    return pd.DataFrame({"probability": probabilities, "quantile": np.round(quantiles, digits)})


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Tabulate Tracy-Widom (beta = 1) quantiles")
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
    parser.add_argument("--digits", type=int, default=4)
    args = parser.parse_args(argv)

    table = build_table(digits=args.digits)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("# Tracy-Widom (beta = 1) quantiles, F1(quantile) = probability.\n")
        fh.write("# Regenerate with scripts/generate_tw1_table.py.\n")
        table.to_csv(fh, index=False)
    print(f"✅ Wrote {len(table)} quantiles to {args.out}")
    print(table.to_string(index=False))
    return 0


if __name__ == "__main__":
    sys.exit(main())
