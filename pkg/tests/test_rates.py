import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from nestedbec.params import C, EPS0, HBAR, KB, CavityMode, DyeParameters, GeometrySpec, LaserSpec
from nestedbec.rates import (
    CorrelationModel,
    InvariantError,
    RateOptions,
    RateSet,
    K_transform,
    absorption_emission,
    assemble_rates,
    displacement_correlation,
    gamma_up,
    kappa_from_mode,
    kennard_stepanov_check,
    light_shift,
    lineshape_limit,
    sideband_weights,
    zero_temperature_orientation,
)

from oracles import (
    coherent_overlap_correlation,
    lorentzian_pv_shift,
    periodic_quadrature_K,
    thermal_fock_correlation,
)

D01 = 3.34e-30


def dye(**kw):
    base = dict(omega10=2.4e15, Omega=1.5e14, S=0.5, d01=D01, T=300.0)
    base.update(kw)
    return DyeParameters(**base)


def model_with_nbar(S, nbar, Omega=1.0):
    T = 0.0 if nbar == 0 else HBAR * Omega / (KB * math.log1p(1 / nbar))
    return CorrelationModel(S=S, Omega=Omega, T=T)


# stage 1


def test_kappa_is_linewidth():
    m = CavityMode(omega=2.3e15, gamma=2 * math.pi * 1e9, Omega=1e10)
    assert kappa_from_mode(m) == 2 * math.pi * 1e9
    m2 = CavityMode(omega=2.3e15, gamma=4 * math.pi * 1e9, Omega=1e10)
    assert kappa_from_mode(m2) == 2 * kappa_from_mode(m)


def test_gamma_up_closed_form():
    dy = dye()
    ref = math.pi * D01**2 * 1e7 / (C * EPS0 * HBAR**2)
    values = [gamma_up(LaserSpec(I0=1e7, lineshape=ls), dy) for ls in ("rectangular", "gaussian", "lorentzian")]
    assert values[0] == pytest.approx(ref, rel=1e-12)
    assert values[0] == values[1] == values[2]
    assert gamma_up(LaserSpec(I0=0.0), dy) == 0.0
    assert gamma_up(LaserSpec(I0=2e7), dy) == pytest.approx(2 * ref, rel=1e-15)


def test_gamma_up_regime_warning():
    with pytest.warns(UserWarning, match="broadband"):
        gamma_up(LaserSpec(I0=1.0, width=1e12), dye(), t_obs=1e-12)


def test_gamma_up_rejects_negative():
    with pytest.raises(ValueError):
        LaserSpec(I0=-1.0)


def _rect_exact(X):
    # int_{-X}^{X} sin^2 x / x^2 dx
    return 2 * (special.sici(2 * X)[0] - math.sin(X) ** 2 / X)


def _lorentz_exact(h):
    # int h^2/(x^2+h^2) sin^2 x / x^2 dx over the real line
    return math.pi / (2 * h) * (2 * h - 1 + math.exp(-2 * h))


@pytest.mark.parametrize("gt", [1e-2, 1.0, 30.0, 1e3])
def test_lineshape_closed_forms(gt):
    t = 1e-12
    g = gt / t
    half = g * t / 4
    rect = lineshape_limit("rectangular", g, t)
    assert rect == pytest.approx(0.5 * t * _rect_exact(half), rel=1e-9)
    lor = lineshape_limit("lorentzian", g, t)
    assert lor == pytest.approx(0.5 * t * _lorentz_exact(half), rel=1e-7)


@pytest.mark.parametrize("gt", [1e-2, 1.0, 1e3])
def test_lineshape_gaussian_quadrature(gt):
    t = 1.0
    f = lambda w: math.exp(-0.5 * (w / gt) ** 2) * (t / 2) ** 2 * np.sinc(w * t / 2 / math.pi) ** 2
    ref = 2 * integrate.quad(f, 0, 12 * gt, limit=5000, epsabs=0, epsrel=1e-12)[0]
    assert lineshape_limit("gaussian", gt, t) == pytest.approx(ref, rel=1e-8)


def test_lineshape_universality():
    t = 1.0
    vals = [lineshape_limit(ls, 1e3, t) for ls in ("rectangular", "gaussian", "lorentzian")]
    for v in vals:
        assert abs(v / (math.pi * t / 2) - 1) < 1e-2
    for a in vals:
        for b in vals:
            assert abs(a / b - 1) < 1e-2


def test_lineshape_short_time():
    t, g = 1.0, 1e-2
    small = {
        "rectangular": g,
        "gaussian": g * math.sqrt(2 * math.pi),
        "lorentzian": g * math.pi / 2,
    }
    for ls, area in small.items():
        v = lineshape_limit(ls, g, t)
        assert v == pytest.approx(t**2 * area / 4, rel=5e-3)
        assert v < 0.1 * math.pi * t / 2


PREF = D01**2 / (2 * C * EPS0 * HBAR**2)


@pytest.mark.parametrize("ls", ["rectangular", "gaussian", "lorentzian"])
def test_light_shift_symmetric_zero(ls):
    assert light_shift(LaserSpec(I0=1.0, lineshape=ls, width=1e13), dye()) == 0.0
    assert light_shift(LaserSpec(I0=0.0, lineshape=ls, width=1e13, center=2.5e15), dye()) == 0.0


@pytest.mark.parametrize("off", [10.0, -3.0, 0.2])
def test_light_shift_closed_forms(off):
    g, dy = 1e13, dye()
    w = dy.omega10 + off * g
    lor = light_shift(LaserSpec(I0=1.0, lineshape="lorentzian", width=g, center=w), dy)
    assert lor == pytest.approx(PREF * lorentzian_pv_shift(g, off * g), rel=1e-8)
    gau = light_shift(LaserSpec(I0=1.0, lineshape="gaussian", width=g, center=w), dy)
    assert gau == pytest.approx(PREF * 2 * math.sqrt(math.pi) * special.dawsn(off / math.sqrt(2)), rel=1e-8)
    rec = light_shift(LaserSpec(I0=1.0, lineshape="rectangular", width=g, center=w), dy)
    assert rec == pytest.approx(PREF * math.log(abs((off + 0.5) / (off - 0.5))), rel=1e-8)


# stage 2: correlator


@settings(max_examples=30, deadline=None)
@given(S=st.floats(0, 3), W=st.floats(1e12, 1e15), T=st.floats(0, 2000))
def test_correlator_unity_at_zero(S, W, T):
    c = displacement_correlation(CorrelationModel(S=S, Omega=W, T=T), 0.0)
    assert c == 1 + 0j


def test_correlator_no_coupling():
    m = CorrelationModel(S=0.0, Omega=1e14, T=300.0)
    assert np.all(displacement_correlation(m, np.linspace(0, 1e-12, 50)) == 1)


def test_correlator_zero_temperature_fock_oracle():
    m = CorrelationModel(S=0.5, Omega=1.0, T=0.0)
    assert displacement_correlation(m, math.pi) == pytest.approx(math.exp(-4), abs=1e-12)
    for tau in np.linspace(0, 7, 15):
        ref = coherent_overlap_correlation(0.5, 1.0, tau, cutoff=40)
        assert abs(displacement_correlation(m, tau) - ref) < 1e-12


@pytest.mark.parametrize("nbar", [0.0, 0.05, 0.4])
def test_correlator_thermal_fock_oracle(nbar):
    m = model_with_nbar(0.3, nbar)
    for tau in (0.4, 1.9, 3.0, 5.5):
        ref = thermal_fock_correlation(0.3, 1.0, m.nbar, tau, cutoff=70)
        assert abs(displacement_correlation(m, tau) - ref) < 1e-10


@pytest.mark.parametrize("S,nbar", [(0.0, 0.0), (0.5, 0.0), (1.0, 0.3), (2.5, 1.2)])
def test_sideband_weights_reproduce_correlator(S, nbar):
    m = model_with_nbar(S, nbar)
    k, w = sideband_weights(m)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    tau = np.linspace(0, 10, 37)
    series = np.sum(w * np.exp(1j * np.outer(tau, k)), axis=1)
    assert np.max(np.abs(series - displacement_correlation(m, tau))) < 1e-11


def test_sideband_weights_detailed_balance():
    m = model_with_nbar(0.7, 0.2)
    k, w = sideband_weights(m)
    lookup = dict(zip(k, w))
    for j in (1, 2, 3):
        assert lookup[j] / lookup[-j] == pytest.approx(((m.nbar + 1) / m.nbar) ** j, rel=1e-9)


# stage 2: K transform


def test_K_zero_coupling_lorentzian_grid():
    m = CorrelationModel(S=0.0, Omega=1.5e14, T=300.0)
    On = 3e11
    worst = 0.0
    for G in np.logspace(10, 14, 10):
        d = np.linspace(-20 * G, 20 * G, 10)
        got = 2 * K_transform(m, On, d, G).real
        ref = On**2 * G / (d**2 + G**2 / 4)
        worst = max(worst, np.max(np.abs(got / ref - 1)))
    assert worst < 1e-10


def test_K_peak_at_zero_detuning():
    m = CorrelationModel(S=0.0, Omega=1.0, T=0.0)
    assert 2 * K_transform(m, 2.0, 0.0, 0.1).real == pytest.approx(4 * 4.0 / 0.1, rel=1e-14)


@settings(max_examples=12, deadline=None)
@given(
    S=st.floats(0, 1.5),
    nbar=st.sampled_from([0.0, 0.01, 0.3]),
    delta=st.floats(-4, 4),
    G=st.floats(0.02, 2.0),
    On=st.floats(0.1, 1.0),
)
def test_K_series_matches_quadrature(S, nbar, delta, G, On):
    m = model_with_nbar(S, nbar)
    got = K_transform(m, On, delta, G)
    ref = periodic_quadrature_K(S, 1.0, m.nbar, On, delta, G)
    assert abs(got - ref) < 1e-8


def test_emission_sidebands_zero_temperature():
    S, G = 1.0, 1e-3
    m = CorrelationModel(S=S, Omega=1.0, T=0.0)
    ks = np.arange(0, 6)
    emission = np.array([2 * K_transform(m, 1.0, k, G).real for k in ks])  # Gamma(-delta) at delta = -k
    weights = math.exp(-4 * S) * (4 * S) ** ks / np.array([math.factorial(int(k)) for k in ks])
    assert np.allclose(emission / emission[0], weights / weights[0], rtol=1e-3)
    # peak positions: local maxima of the emission spectrum
    x = np.linspace(-0.5, 5.5, 60001)
    spec = 2 * K_transform(m, 1.0, x, G).real
    peaks = x[1:-1][(spec[1:-1] > spec[:-2]) & (spec[1:-1] > spec[2:])]
    assert np.allclose(peaks[:6], ks, atol=G)
    ref = [periodic_quadrature_K(S, 1.0, 0.0, 1.0, k, G) for k in (0.0, 1.0, 2.5)]
    got = [K_transform(m, 1.0, k, G) for k in (0.0, 1.0, 2.5)]
    assert np.allclose(got, ref, rtol=1e-8)


@settings(max_examples=40, deadline=None)
@given(S=st.floats(0, 3), nbar=st.floats(0, 3), delta=st.floats(-10, 10), G=st.floats(1e-4, 10))
def test_rates_positive(S, nbar, delta, G):
    m = model_with_nbar(S, nbar)
    ga, ge, _, _ = absorption_emission(m, 1.0, delta, G)
    assert ga >= 0 and ge >= 0


@pytest.mark.parametrize("S", [0.0, 0.3, 1.0])
@pytest.mark.parametrize("T", [0.0, 300.0])
def test_sum_rule(S, T):
    W = 1.5e14
    m = CorrelationModel(S=S, Omega=W, T=T)
    On, G = 1e12, 0.05 * W
    k, _ = sideband_weights(m)
    f = lambda x: 2 * K_transform(m, On, x * W, G).real * W
    pts = sorted(set(k.astype(float)))
    lo, hi = pts[0] - 50, pts[-1] + 50
    opt = dict(epsabs=0, epsrel=1e-12, limit=2000)
    total = integrate.quad(f, lo, hi, points=pts, **opt)[0]
    total += integrate.quad(f, hi, np.inf, **opt)[0] + integrate.quad(f, -np.inf, lo, **opt)[0]
    assert total == pytest.approx(2 * math.pi * On**2, rel=1e-6)


def test_K_rejects_bad_damping():
    m = CorrelationModel(S=0.3, Omega=1.0, T=0.0)
    with pytest.raises(ValueError):
        K_transform(m, 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        K_transform(m, -1.0, 0.0, 1.0)


# Kennard-Stepanov


def test_orientation_from_zero_temperature():
    assert zero_temperature_orientation() == 1
    m = CorrelationModel(S=1.0, Omega=1.0, T=0.0)
    forbidden, allowed = (2 * K_transform(m, 1.0, d, 1e-3).real for d in (-1.0, 1.0))
    assert forbidden < 1e-4 * allowed


def test_detailed_balance_at_room_temperature():
    W = 1.5e14
    m = CorrelationModel(S=0.5, Omega=W, T=300.0)
    beta = HBAR / (KB * 300.0)
    G = 1e-3 * W
    for d in (W, -W):
        ga, ge, _, _ = absorption_emission(m, 1e12, d, G)
        assert abs(ga / ge / math.exp(beta * d) - 1) < max(1e-2, 5 * G / W)


def _rateset_from(dy, deltas, gamma=1e9, Om=1e10, **opts):
    modes = [CavityMode(omega=dy.omega10 + d, gamma=gamma, Omega=Om, index=i) for i, d in enumerate(deltas)]
    return assemble_rates(dy, LaserSpec(I0=0.0), modes=modes, options=RateOptions(gamma_down=0.0, **opts))


def test_ks_report():
    dy = dye()
    W = dy.Omega
    rs = _rateset_from(dy, [0.0, W, -W])
    rep = kennard_stepanov_check(rs, dy)
    assert rep[0].ratio == pytest.approx(1.0, rel=1e-12)
    assert all(r.in_regime for r in rep)
    assert max(r.deviation for r in rep) < 1e-2


# assembly


def test_gamma_composition_identity():
    dy = dye()
    rs = _rateset_from(dy, [0.0], gamma=2e9)
    assert rs.Gamma[0] == rs.kappa[0] == 2e9
    assert rs.gamma_up == 0.0 and rs.gamma_down == 0.0


def test_pump_broadens_lines():
    dy = dye(S=0.0)
    mode = [CavityMode(omega=dy.omega10, gamma=1e9, Omega=1e10)]
    peaks = []
    for I0 in (0.0, 1e-8, 1e-7, 1e-6):
        rs = assemble_rates(dy, LaserSpec(I0=I0), modes=mode, options=RateOptions(gamma_down=0.0))
        peaks.append(rs.gamma_abs[0])
        assert rs.gamma_abs[0] == pytest.approx(4 * 1e20 / rs.Gamma[0], rel=1e-12)
    assert all(a > b for a, b in zip(peaks, peaks[1:]))


def test_resonant_exceeding_total_is_error():
    dy = dye()
    mode = [CavityMode(omega=dy.omega10, gamma=1e9, Omega=1e13)]
    with pytest.raises(InvariantError):
        assemble_rates(dy, LaserSpec(I0=0.0), modes=mode)


def test_assemble_from_geometry_and_shifts():
    d = 1e-6
    r = -math.sqrt(0.99)
    geo = GeometrySpec(kind="planar_cavity", length=d, position=0.3 * d, r1=r, r2=r)
    w1 = math.pi * C / d
    dy = dye(omega10=2.1 * w1, Omega=1e14)
    rs = assemble_rates(dy, LaserSpec(I0=1e-7), geometry=geo, options=RateOptions(scan_window=(0.5 * w1, 4.5 * w1)))
    assert rs.n_modes == 4
    assert rs.gamma_down == pytest.approx(rs.gamma_down_tot - rs.gamma_down_res, rel=1e-12)
    assert rs.gamma_down >= 0
    assert rs.omega10 == pytest.approx(dy.omega10 - rs.delta_gamma_down_res, rel=1e-15)
    coef = rs.hamiltonian_coefficients()
    assert coef["molecule"] == pytest.approx(rs.omega10 + rs.kpp_em.sum())
    assert np.allclose(coef["cross"], rs.kpp_em - rs.kpp_abs)


def test_rateset_json_roundtrip():
    dy = dye()
    rs = _rateset_from(dy, [-1e13, 0.0, 2e13], delta_kappa=3e8, delta_gamma_up=-1e7)
    rs.meta["config_hash"] = "abc"
    text = rs.to_json()
    data = json.loads(text)
    for key in ("kappa", "gamma_up", "gamma_down_tot", "gamma_down_res", "gamma_down", "Gamma",
                "gamma_abs", "gamma_em", "kpp_abs", "kpp_em", "delta_kappa", "delta_gamma_up"):
        assert key in data
    back = RateSet.from_json(text)
    assert back.to_json() == text
    assert np.array_equal(back.gamma_abs, rs.gamma_abs)
    assert back.meta == {"config_hash": "abc"}


def test_rateset_invariants():
    with pytest.raises(InvariantError):
        RateSet(omega10=1.0, omega_nu=[1.0], N=1, kappa=[1.0], gamma_up=0.0, gamma_down_tot=0.0,
                gamma_down_res=0.0, gamma_down=0.0, Gamma=[2.0], gamma_abs=[0.0], gamma_em=[0.0],
                kpp_abs=[0.0], kpp_em=[0.0])
