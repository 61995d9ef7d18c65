"""Convergence of the pump excitation integral to pi t / 2 for the three lineshapes."""

import argparse
import math

from nestedbec.rates import lineshape_limit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gamma-t", default="1,3,10,30,100,300,1000,3000")
    args = ap.parse_args()
    shapes = ("rectangular", "lorentzian", "gaussian")
    print(f"{'gamma t':>8} " + " ".join(f"{s:>12}" for s in shapes))
    for gt in (float(x) for x in args.gamma_t.split(",")):
        vals = [lineshape_limit(s, gt, 1.0) / (math.pi / 2) for s in shapes]
        print(f"{gt:8g} " + " ".join(f"{v:12.6f}" for v in vals))


if __name__ == "__main__":
    main()
