"""Command line entry point: ``nestedbec {rates,evolve,steady,scan,verify}``.

Exit codes: 0 success (a scan without threshold included), 2 configuration
error, 3 I/O error, 4 numerical failure or failed verification.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
import traceback
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .greens import QuadratureError, gamma_down_total
from .lindblad import (
    DimensionError,
    HilbertLayout,
    QuantumState,
    TraceDriftError,
    build_liouvillian,
    default_dt,
    evolve,
    excitation,
    photon_number,
    steady_state,
)
from .lindblad import SteadyStateError as QuantumSteadyError
from .meanfield import DegenerateFitError, MeanFieldState, be_fit, march, pump_scan, steady
from .meanfield import SteadyStateError as MeanFieldSteadyError
from .rates import InvariantError, RateSet, assemble_rates, kennard_stepanov_check

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
NUMERICAL = (
    QuadratureError, InvariantError, TraceDriftError, QuantumSteadyError, MeanFieldSteadyError,
    np.linalg.LinAlgError, ArithmeticError,
)


def _provenance_module(exc: BaseException) -> str:
    for frame in reversed(traceback.extract_tb(exc.__traceback__)):
        parts = Path(frame.filename).parts
        if "nestedbec" in parts:
            return "nestedbec." + Path(frame.filename).stem
    return "nestedbec"


# pipeline pieces


def build_rates(cfg: RunConfig) -> RateSet:
    dye = cfg.dye()
    geometry = cfg.geometry()
    options = cfg.rate_options()
    if geometry is not None and cfg.section("geometry").get("isotropic") and options.gamma_down_tot is None:
        options = replace(options, gamma_down_tot=gamma_down_total(dye, geometry, isotropic=True))
    rs = assemble_rates(dye, cfg.laser(), modes=cfg.modes(), geometry=geometry, options=options)
    rs.meta.update(cfg.provenance)
    return rs


def subset(rs: RateSet, k: int) -> RateSet:
    """First k modes of a RateSet."""
    kw = {f: getattr(rs, f) for f in rs.__dataclass_fields__}
    for name in rs._ARRAYS:
        kw[name] = kw[name][:k]
    if rs.Omega_nu is not None:
        kw["Omega_nu"] = rs.Omega_nu[:k]
    kw["meta"] = dict(rs.meta)
    return RateSet(**kw)


def quantum_setup(cfg: RunConfig, rs: RateSet):
    sol = cfg.section("solver")
    k = min(sol.get("quantum_modes", rs.n_modes), rs.n_modes)
    rs = subset(rs, k)
    layout = HilbertLayout(sol.get("molecules", 1), (sol.get("photon_cutoff", 2),) * k)
    L = build_liouvillian(layout, rs, literal_double_sum=sol.get("literal_double_sum", False))
    return rs, layout, L


def _initial_quantum(cfg: RunConfig, layout: HilbertLayout) -> QuantumState:
    ini = cfg.section("initial")
    photons = ini.get("photons", [0] * layout.n_modes)
    excited = ini.get("excited", [0] * layout.n_molecules)
    if len(photons) != layout.n_modes or len(excited) != layout.n_molecules:
        raise ConfigError("[initial] photons/excited lengths must match the modes and molecules")
    return QuantumState.basis(layout, excited, photons)


def _initial_meanfield(cfg: RunConfig, rs: RateSet) -> MeanFieldState:
    ini = cfg.section("initial")
    photons = ini.get("photons", [0] * rs.n_modes)
    if len(photons) != rs.n_modes:
        raise ConfigError("[initial] photons must list one number per mode")
    return MeanFieldState(np.array(photons, dtype=float), ini.get("f", 0.0))


def _header(meta: dict) -> str:
    return "# " + ", ".join(f"{k}={v}" for k, v in sorted(meta.items())) + "\n"


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def ks_table(rs: RateSet, dye) -> str:
    buf = io.StringIO()
    buf.write(f"rates for config {rs.meta.get('config_hash', '?')} (nestedbec {__version__})\n")
    buf.write(f"omega10_eff = {rs.omega10:.10g} rad/s   N = {rs.N:g}\n")
    buf.write(f"gamma_up = {rs.gamma_up:.6g}   gamma_down = {rs.gamma_down:.6g}   "
              f"gamma_down_tot = {rs.gamma_down_tot:.6g}   gamma_down_res = {rs.gamma_down_res:.6g}  (1/s)\n\n")
    buf.write(f"{'mode':>4} {'omega_nu':>14} {'delta':>12} {'kappa':>11} {'Gamma':>11} "
              f"{'G(d)':>11} {'G(-d)':>11} {'KS ratio':>11} {'exp(bhd)':>11} {'dev':>9} regime\n")
    for r in kennard_stepanov_check(rs, dye):
        i = r.index
        buf.write(
            f"{i:4d} {rs.omega_nu[i]:14.8g} {r.delta:12.5g} {rs.kappa[i]:11.4g} {rs.Gamma[i]:11.4g} "
            f"{rs.gamma_abs[i]:11.4g} {rs.gamma_em[i]:11.4g} {r.ratio:11.4g} {r.expected:11.4g} "
            f"{r.deviation:9.2e} {'yes' if r.in_regime else 'no'}\n"
        )
    return buf.getvalue()


# subcommands


def cmd_rates(cfg: RunConfig, out: Path) -> dict:
    rs = build_rates(cfg)
    _write(out / "rates.json", rs.to_json() + "\n")
    _write(out / "rates.txt", ks_table(rs, cfg.dye()))
    return {"rates": str(out / "rates.json"), "n_modes": rs.n_modes, "gamma_up": rs.gamma_up, **cfg.provenance}


def cmd_evolve(cfg: RunConfig, out: Path, engine: str) -> dict:
    rs = build_rates(cfg)
    sol = cfg.section("solver")
    t_final = sol.get("t_final")
    if t_final is None:
        raise ConfigError("missing key 't_final' in [solver]")
    samples = sol.get("samples", 201)
    if samples < 2:
        raise ConfigError("solver.samples must be >= 2")
    path = out / "trajectory.csv"
    meta = {**cfg.provenance, "engine": engine}
    if engine == "quantum":
        rs, layout, L = quantum_setup(cfg, rs)
        dt_max = sol.get("dt", default_dt(L))
        per = max(1, math.ceil(t_final / dt_max / (samples - 1) - 1e-9))
        dt = t_final / (per * (samples - 1))
        tr = evolve(_initial_quantum(cfg, layout), L, t_final, dt=dt, sample_every=per)
        tr.to_csv(path, meta)
        final = {"n_ph": tr.n_ph[-1].tolist(), "health": tr.worst_health}
    else:
        state = _initial_meanfield(cfg, rs)
        t, n, f = march(state, rs, t_final, dye=cfg.dye(), n_samples=samples)
        buf = io.StringIO()
        buf.write(_header({"version": __version__, **meta}))
        cols = ["t"] + [f"n_ph_{i}" for i in range(n.shape[1])] + ["excitation", "f"]
        buf.write(",".join(cols) + "\n")
        N = cfg.dye().N
        for ti, row, fi in zip(t, n, f):
            buf.write(",".join(repr(float(v)) for v in (ti, *row, N * fi, fi)) + "\n")
        _write(path, buf.getvalue())
        final = {"n_ph": n[-1].tolist(), "f": float(f[-1])}
    return {"trajectory": str(path), **final, **meta}


def _fit_report(n, omega, T_ref):
    n = np.asarray(n)
    if n.size < 5 or np.any(n <= 1e-6):
        return None
    try:
        fit = be_fit(n, omega, T_ref=T_ref)
    except DegenerateFitError as exc:
        return {"error": str(exc)}
    return {"T_eff": fit.T_eff, "mu": fit.mu, "residual": fit.residual, "thermal": fit.thermal}


def cmd_steady(cfg: RunConfig, out: Path, engine: str) -> dict:
    rs = build_rates(cfg)
    dye = cfg.dye()
    report = {**cfg.provenance, "engine": engine}
    if engine == "quantum":
        rs, layout, L = quantum_setup(cfg, rs)
        st = steady_state(L)
        lay = getattr(st, "layout", layout)
        report.update(
            n=[photon_number(st, lay, i) for i in range(lay.n_modes)],
            excitation=excitation(st, lay),
            health=st.health(),
        )
    else:
        st = steady(rs, dye)
        report.update(n=st.n.tolist(), f=st.f, residual=st.meta["residual"], method=st.meta["method"],
                      be_fit=_fit_report(st.n, rs.omega_nu, dye.T))
    _write(out / "steady.json", json.dumps(report, sort_keys=True, indent=1) + "\n")
    return report


def plot_scan(res, path: Path, title: str, provenance: dict | None = None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "nestedbec"
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    ax.semilogx(res.pumps, res.ground_fraction, "o-", ms=3, label="ground-mode fraction")
    if res.threshold is not None:
        ax.axvline(res.threshold, color="C3", ls="--", label=f"threshold {res.threshold:.4g} 1/s")
    ax.set_xlabel("pump rate (1/s)")
    ax.set_ylabel("n_0 / sum n")
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    meta = {"Date": None}
    if provenance:
        meta["Description"] = ", ".join(f"{k}={v}" for k, v in sorted(provenance.items()))
    fig.savefig(path, format="svg", metadata=meta)
    plt.close(fig)


def cmd_scan(cfg: RunConfig, out: Path) -> dict:
    rs = build_rates(cfg)
    dye = cfg.dye()
    sc = cfg.section("scan")
    res = pump_scan(rs, dye, cfg.pump_grid(), fraction=sc.get("fraction", 0.5), rtol=sc.get("rtol", 1e-3))
    res.meta.update(cfg.provenance)
    below = np.nonzero(res.ground_fraction < sc.get("fraction", 0.5))[0]
    fit = _fit_report(res.n[below[0]], rs.omega_nu, dye.T) if below.size else None
    _write(out / "scan.csv", res.to_csv())
    doc = res.to_dict()
    doc["be_fit"] = fit
    _write(out / "scan.json", json.dumps(doc, sort_keys=True, indent=1) + "\n")
    plot_scan(res, out / "scan.svg", f"{cfg.name} ({cfg.hash})", cfg.provenance)
    return {"threshold": res.threshold, "status": res.status, "monotone": res.monotone, **cfg.provenance}


def cmd_verify(as_json: bool, flip_kappa_sign: bool = False, only=None) -> tuple[int, str]:
    from .verification import run_all

    results = run_all(flip_kappa_sign=flip_kappa_sign, only=only)
    ok = all(r.passed for r in results)
    if as_json:
        text = json.dumps(
            {"version": __version__, "passed": ok,
             "criteria": [{"number": r.number, "name": r.name, "passed": r.passed, "value": r.value,
                           "tolerance": r.tolerance, "detail": r.detail, "seconds": r.seconds}
                          for r in results]},
            sort_keys=True, indent=1,
        )
    else:
        text = "\n".join(r.line() for r in results)
    return (EXIT_OK if ok else EXIT_NUMERIC), text


# argument handling


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nestedbec", description="Nested Lindblad model of a dye-filled photon condensate.")
    p.add_argument("--version", action="version", version=f"nestedbec {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("rates", "compute the RateSet and the Kennard-Stepanov table"),
        ("evolve", "time evolution to trajectory.csv"),
        ("steady", "steady state to steady.json"),
        ("scan", "pump scan with threshold to scan.csv, scan.json and scan.svg"),
    ]:
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", help="TOML run configuration (default: built-in reference)")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--json", action="store_true", help="print a JSON summary")
        if name in ("evolve", "steady"):
            s.add_argument("--engine", choices=["quantum", "meanfield"], help="override run.engine")
    v = sub.add_parser("verify", help="run the acceptance checks on built-in configurations")
    v.add_argument("--json", action="store_true", help="machine-readable report")
    v.add_argument("--only", help="comma separated criterion numbers")
    v.add_argument("--flip-kappa-sign", action="store_true", help=argparse.SUPPRESS)
    return p


def run(argv=None) -> tuple[int, str]:
    args = parser().parse_args(argv)
    if args.command == "verify":
        only = None
        if args.only:
            try:
                only = {int(x) for x in args.only.split(",")}
            except ValueError:
                return EXIT_CONFIG, "error: --only expects comma separated integers"
        return cmd_verify(args.json, args.flip_kappa_sign, only)
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig.builtin("reference")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            if args.command == "rates":
                summary = cmd_rates(cfg, out)
            elif args.command == "evolve":
                summary = cmd_evolve(cfg, out, args.engine or cfg.engine)
            elif args.command == "steady":
                summary = cmd_steady(cfg, out, args.engine or cfg.engine)
            else:
                summary = cmd_scan(cfg, out)
    except ConfigError as exc:
        return EXIT_CONFIG, f"config error: {exc}"
    except OSError as exc:
        return EXIT_IO, f"I/O error: {exc}"
    except NUMERICAL as exc:
        return EXIT_NUMERIC, f"numerical failure in {_provenance_module(exc)}: {exc}"
    except (DimensionError, ValueError) as exc:
        return EXIT_CONFIG, f"invalid input in {_provenance_module(exc)}: {exc}"
    if args.json:
        return EXIT_OK, json.dumps(summary, sort_keys=True, indent=1, default=float)
    return EXIT_OK, "\n".join(f"{k}: {v}" for k, v in sorted(summary.items()))


def main(argv=None) -> int:
    code, text = run(argv)
    failed_checks = code == EXIT_NUMERIC and text.startswith(("PASS", "FAIL", "{"))
    stream = sys.stdout if code == EXIT_OK or failed_checks else sys.stderr
    if text:
        print(text, file=stream)
    return code


if __name__ == "__main__":
    sys.exit(main())
