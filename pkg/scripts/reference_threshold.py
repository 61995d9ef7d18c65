"""Pump scans of the built-in reference cavity, with the ground-mode loss scaled.

Writes thresholds.csv and threshold.svg.
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from nestedbec.meanfield import pump_scan
from nestedbec.verification import reference_pump_rates


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/reference_threshold")
    ap.add_argument("--scales", default="0.1,1,10")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    lines = ["ground_kappa_scale,threshold,status,monotone"]
    for s in (float(x) for x in args.scales.split(",")):
        cfg, rs = reference_pump_rates(scale_ground_kappa=s)
        sc = cfg.section("scan")
        res = pump_scan(rs, cfg.dye(), cfg.pump_grid(), fraction=sc.get("fraction", 0.5), rtol=sc.get("rtol", 1e-3))
        print(f"ground kappa x {s:g}: threshold = {res.threshold}  ({res.status}, monotone={res.monotone})")
        lines.append(f"{s!r},{res.threshold!r},{res.status},{res.monotone}")
        ax.semilogx(res.pumps, res.ground_fraction, "o-", ms=3, label=f"ground kappa x {s:g}")
    ax.axhline(0.5, color="0.6", lw=0.8)
    ax.set_xlabel("pump rate (1/s)")
    ax.set_ylabel("n_0 / sum n")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "threshold.svg", metadata={"Date": None})
    (out / "thresholds.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
