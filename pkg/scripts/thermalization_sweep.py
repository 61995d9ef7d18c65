"""Bose-Einstein fit of sub-threshold steady states as cavity loss grows.

kappa is set per mode as a multiple of the collective reabsorption rate
N Gamma(delta).  Writes thermalization.csv and populations.svg.
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from nestedbec.meanfield import be_fit, steady
from nestedbec.verification import thermalization_dye, thermalization_rates


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/thermalization")
    ap.add_argument("--ratios", default="1e-3,1e-2,1e-1,1,10")
    ap.add_argument("--pump", type=float, default=1e-4, help="Gamma_up in units of the vibrational frequency")
    ap.add_argument("--uniform", action="store_true", help="same kappa in every mode")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    dye = thermalization_dye()
    rows = []
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for r in (float(x) for x in args.ratios.split(",")):
        rs = thermalization_rates(kappa_ratio=r, uniform=args.uniform).with_pump(args.pump * dye.Omega, dye)
        st = steady(rs, dye)
        fit = be_fit(st.n, rs.omega_nu, T_ref=dye.T)
        rows.append((r, fit.T_eff, fit.residual, fit.thermal, st.total_photons))
        print(f"kappa/NGamma = {r:8.1e}   T_eff = {fit.T_eff:9.2f} K   residual = {fit.residual:.3e}   "
              f"thermal = {fit.thermal}")
        ax.semilogy(rs.omega_nu - rs.omega10, st.n, "o-", ms=3, label=f"{r:g}")
    ax.set_xlabel("detuning (rad/s)")
    ax.set_ylabel("n_nu")
    ax.legend(title="kappa / N Gamma", fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "populations.svg", metadata={"Date": None})

    with open(out / "thermalization.csv", "w") as fh:
        fh.write("kappa_ratio,T_eff,residual,thermal,total_photons\n")
        for r, T, res, th, tot in rows:
            fh.write(f"{r!r},{T!r},{res!r},{int(th)},{tot!r}\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
