"""Explicit-phonon model vs nested rates as the vibrational damping is varied.

S = 0.3, T = 0, Gamma = 1e-2 Omega, Omega_nu = 0.1 Gamma.  The nested
model assumes a thermalized vibration, so agreement improves as the phonon
damping grows.
"""

import argparse

from nestedbec.lindblad import explicit_phonon_oracle
from nestedbec.params import CavityMode, DyeParameters


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dampings", default="0.003,0.01,0.03", help="phonon damping in units of Omega")
    ap.add_argument("--cutoff", type=int, default=20)
    args = ap.parse_args()

    W, W10 = 1.5e14, 2.4e15
    G = 1e-2 * W
    dye = DyeParameters(omega10=W10, Omega=W, S=0.3, d01=3e-30, T=0.0)
    mode = CavityMode(omega=W10, gamma=0.9 * G, Omega=0.1 * G)
    print(f"{'damping/W':>10} {'n explicit':>12} {'n nested':>12} {'deviation':>10} {'leak':>9}")
    for g in (float(x) for x in args.dampings.split(",")):
        rep = explicit_phonon_oracle(dye, mode, 0.05 * G, 0.05 * G, phonon_cutoff=args.cutoff, phonon_damping=g * W)
        print(f"{g:10.3g} {rep.n_explicit:12.5e} {rep.n_nested:12.5e} {rep.relative_deviation:10.3%} {rep.phonon_leak:9.1e}")


if __name__ == "__main__":
    main()
