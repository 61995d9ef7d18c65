"""Command line layer: config validation, exit codes, outputs, goldens and provenance."""

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nestedbec import __version__
from nestedbec.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, build_rates, run
from nestedbec.config import ConfigError, RunConfig, quantity
from nestedbec.meanfield import steady

from oracles import periodic_quadrature_K

GOLDEN = Path(__file__).parent / "golden"
CONFIGS = Path(__file__).resolve().parents[1] / "src" / "nestedbec" / "configs"
REF = RunConfig.builtin("reference")
EMPTY = RunConfig.builtin("empty_cavity")


def ref_text(**replace):
    text = (CONFIGS / "reference.toml").read_text()
    for old, new in replace.items():
        assert old in text
        text = text.replace(old, new)
    return text


def write_cfg(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# configuration


def test_unknown_key_named(tmp_path):
    cfg = write_cfg(tmp_path, ref_text(**{'I0 = "8e-10 J_m2"': 'gama_up = "1e5 rad_s"'}))
    code, text = run(["rates", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG
    assert "gama_up" in text and "[laser]" in text


def test_unknown_section_named():
    with pytest.raises(ConfigError, match="lazer"):
        RunConfig.from_text('[lazer]\nI0 = "1 J_m2"\n')


@pytest.mark.parametrize(
    "text, match",
    [
        ("2.4e15", "unit"),
        ("2.4e15 furlongs", "unknown unit"),
        ("300 K", "temperature"),
        ("abc rad_s", "bad number"),
    ],
)
def test_quantity_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        quantity(text, "angular", "dye.omega10")


def test_quantity_units():
    assert quantity("1 eV", "angular", "x") == pytest.approx(1.602176634e-19 / 1.054571817e-34, rel=1e-9)
    assert quantity("10 um", "length", "x") == pytest.approx(1e-5)
    assert quantity("2 Hz", "angular", "x") == pytest.approx(4 * math.pi)


def test_dimension_mismatch_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, ref_text(**{'T = "300 K"': 'T = "300 rad_s"'}))
    code, text = run(["rates", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG and "dye.T" in text


def test_bad_toml_and_missing_file(tmp_path):
    cfg = write_cfg(tmp_path, "[dye\n")
    assert run(["rates", "--config", cfg, "--out", str(tmp_path)])[0] == EXIT_CONFIG
    assert run(["rates", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)])[0] == EXIT_IO


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, text = run(["rates", "--out", str(blocker)])
    assert code == EXIT_IO and "I/O" in text


def test_hash_ignores_formatting():
    a = RunConfig.from_text(ref_text(**{'S = 0.5': 'S   =   0.5   # comment'}))
    b = RunConfig.from_text(ref_text(**{'S = 0.5\nd01 = "10 D"': 'd01 = "10 D"\nS = 0.5'}))
    assert a.hash == REF.hash == b.hash
    assert RunConfig.from_text(ref_text(**{'S = 0.5': 'S = 0.6'})).hash != REF.hash


def test_zero_pump_gives_zero_gamma_up(tmp_path):
    cfg = write_cfg(tmp_path, ref_text(**{'"8e-10 J_m2"': '"0 J_m2"'}))
    code, text = run(["rates", "--config", cfg, "--out", str(tmp_path), "--json"])
    assert code == EXIT_OK
    assert json.loads(text)["gamma_up"] == 0.0
    assert json.loads((tmp_path / "rates.json").read_text())["gamma_up"] == 0.0


# golden fixtures


def test_rates_golden(tmp_path):
    assert run(["rates", "--out", str(tmp_path)])[0] == EXIT_OK
    golden = GOLDEN / f"rates_{REF.hash}.json"
    assert golden.exists(), "golden missing for current reference hash; run scripts/regenerate_golden.py"
    assert (tmp_path / "rates.json").read_bytes() == golden.read_bytes()


def test_golden_rates_match_quadrature():
    """The pinned absorption/emission rates against direct integration of the correlator."""
    d = json.loads((GOLDEN / f"rates_{REF.hash}.json").read_text())
    dye = REF.dye()
    W = dye.Omega
    nbar = 1 / math.expm1(1.054571817e-34 * W / (1.380649e-23 * dye.T))
    for i in (0, 7, 19):
        delta = d["omega_nu"][i] - d["omega10"]
        On, G = d["Omega_nu"][i], d["Gamma"][i]
        scale = On**2 / W
        kp = scale * periodic_quadrature_K(dye.S, 1.0, nbar, 1.0, delta / W, G / W)
        km = scale * periodic_quadrature_K(dye.S, 1.0, nbar, 1.0, -delta / W, G / W)
        assert 2 * kp.real == pytest.approx(d["gamma_abs"][i], rel=1e-7)
        assert 2 * km.real == pytest.approx(d["gamma_em"][i], rel=1e-7)
        assert kp.imag == pytest.approx(d["kpp_abs"][i], rel=1e-7)


def test_scan_golden(tmp_path):
    code, _ = run(["scan", "--out", str(tmp_path)])
    assert code == EXIT_OK
    got = json.loads((tmp_path / "scan.json").read_text())
    ref = json.loads((GOLDEN / f"scan_{REF.hash}.json").read_text())
    assert got["status"] == ref["status"] == "bracketed"
    assert got["threshold"] == pytest.approx(ref["threshold"], rel=1e-3)


def test_trajectory_golden(tmp_path):
    code, _ = run(["evolve", "--config", str(CONFIGS / "empty_cavity.toml"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    golden = GOLDEN / f"trajectory_{EMPTY.hash}.csv"
    assert (tmp_path / "trajectory.csv").read_bytes() == golden.read_bytes()


def test_reference_below_saturation():
    """At its configured pump the reference cavity holds well under one photon per mode."""
    rs = build_rates(REF)
    st = steady(rs, REF.dye())
    assert np.all(st.n < 1)
    assert st.meta["residual"] < 1e-12


# empty cavity through both engines


def load_csv(path):
    lines = [l for l in Path(path).read_text().splitlines() if not l.startswith("#")]
    header = lines[0].split(",")
    return header, np.array([[float(x) for x in l.split(",")] for l in lines[1:]])


def test_empty_cavity_exponential(tmp_path):
    code, _ = run(["evolve", "--config", str(CONFIGS / "empty_cavity.toml"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    header, data = load_csv(tmp_path / "trajectory.csv")
    t, n = data[:, 0], data[:, header.index("n_ph_0")]
    slope, icpt = np.polyfit(t, np.log(n), 1)
    pred = slope * t + icpt
    y = np.log(n)
    r2 = 1 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2)
    assert r2 > 1 - 1e-9
    assert -slope == pytest.approx(1e10, rel=1e-6)


def test_engines_agree_without_molecules(tmp_path):
    cfg = str(CONFIGS / "empty_cavity.toml")
    assert run(["evolve", "--config", cfg, "--out", str(tmp_path / "q"), "--engine", "quantum"])[0] == EXIT_OK
    assert run(["evolve", "--config", cfg, "--out", str(tmp_path / "m"), "--engine", "meanfield"])[0] == EXIT_OK
    hq, q = load_csv(tmp_path / "q" / "trajectory.csv")
    hm, m = load_csv(tmp_path / "m" / "trajectory.csv")
    assert np.array_equal(q[:, 0], m[:, 0])
    nq, nm = q[:, hq.index("n_ph_0")], m[:, hm.index("n_ph_0")]
    assert np.allclose(nq, np.exp(-1e10 * q[:, 0]), rtol=1e-7)
    assert np.allclose(nm, nq, rtol=1e-7)


# scan edge cases


def test_single_point_grid_not_bracketed(tmp_path):
    text = ref_text(**{'pump_min = "1e5 rad_s"\npump_max = "1e8 rad_s"\npoints = 31':
                       'pumps = ["1e6 rad_s"]'})
    code, out = run(["scan", "--config", write_cfg(tmp_path, text), "--out", str(tmp_path), "--json"])
    assert code == EXIT_OK
    assert json.loads(out)["status"] == "not_bracketed"
    assert json.loads(out)["threshold"] is None


def test_below_threshold_grid_exit_zero(tmp_path):
    text = ref_text(**{'pump_max = "1e8 rad_s"': 'pump_max = "5e5 rad_s"'})
    code, out = run(["scan", "--config", write_cfg(tmp_path, text), "--out", str(tmp_path), "--json"])
    assert code == EXIT_OK
    assert json.loads(out)["status"] == "not_bracketed"
    for name in ("scan.csv", "scan.json", "scan.svg"):
        assert (tmp_path / name).exists()


def test_mixed_scan_grid_rejected(tmp_path):
    text = ref_text(**{"points = 31": 'points = 31\npumps = ["1e6 rad_s"]'})
    assert run(["scan", "--config", write_cfg(tmp_path, text), "--out", str(tmp_path)])[0] == EXIT_CONFIG


# determinism and provenance


def test_outputs_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert run(["scan", "--out", str(tmp_path / sub)])[0] == EXIT_OK
        assert run(["rates", "--out", str(tmp_path / sub)])[0] == EXIT_OK
    for name in ("scan.csv", "scan.json", "scan.svg", "rates.json", "rates.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_provenance_everywhere(tmp_path):
    for cmd in (["rates"], ["scan"], ["steady"], ["evolve"]):
        assert run([*cmd, "--out", str(tmp_path)])[0] == EXIT_OK
    for name in ("rates.json", "rates.txt", "scan.csv", "scan.json", "scan.svg", "steady.json", "trajectory.csv"):
        text = (tmp_path / name).read_text()
        assert REF.hash in text, name
        assert __version__ in text, name


def test_steady_json_fit_report(tmp_path):
    code, _ = run(["steady", "--out", str(tmp_path)])
    assert code == EXIT_OK
    d = json.loads((tmp_path / "steady.json").read_text())
    assert d["residual"] < 1e-12
    assert len(d["n"]) == 20


# verify


def test_verify_json_subset():
    code, text = run(["verify", "--json", "--only", "3,4"])
    assert code == EXIT_OK
    d = json.loads(text)
    assert d["passed"] and [c["number"] for c in d["criteria"]] == [3, 4]


def test_verify_flip_fails_with_numeric_exit():
    code, text = run(["verify", "--only", "1", "--flip-kappa-sign"])
    assert code == EXIT_NUMERIC
    assert text.startswith("FAIL")


def test_verify_bad_only():
    assert run(["verify", "--only", "x"])[0] == EXIT_CONFIG


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nestedbec", "rates", "--out", str(tmp_path), "--json"],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["config_hash"] == REF.hash
    bad = subprocess.run([sys.executable, "-m", "nestedbec", "rates", "--out", str(tmp_path / "rates.json")],
                         capture_output=True, text=True, timeout=300)
    assert bad.returncode == EXIT_IO and "I/O" in bad.stderr
