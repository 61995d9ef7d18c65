"""Imaginary part of the coincident-point Green's tensor and derived emission rates.

Free space is closed form.  The planar cavity uses the two-mirror reflection
series for the scattering part, integrated over the normal wavenumber k_z:
first along the real axis (propagating waves, 0 <= k_z <= k) and then along
k_z = i*kappa (evanescent waves).  Mirror reflection coefficients are angle
independent.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize, signal

from .params import (
    C,
    HBAR,
    MU0,
    CavityMode,
    DyeParameters,
    GeometryKind,
    GeometrySpec,
)

RTOL_TARGET = 1e-8
RTOL_HARD = 1e-6
_UNIMODULAR_TOL = 1e-12


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the hard tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved relative error {achieved:.3g})")
        self.achieved = achieved


@dataclass(frozen=True)
class GreensEvaluation:
    omega: float
    imG: np.ndarray
    rel_error: float = 0.0
    decomposition_by_k: dict | None = field(default=None, compare=False)

    def project(self, dipole) -> float:
        d = np.asarray(dipole, dtype=float)
        return float(d @ self.imG @ d)


def _wavenumber(geometry: GeometrySpec, omega: float) -> float:
    eps = geometry.epsilon(omega)
    if eps.imag > 0:
        # coincident-point Im G diverges inside an absorbing host
        raise ValueError("absorbing background permittivity is not supported at the emitter")
    if eps.imag < 0:
        raise ValueError("Im eps < 0 violates passivity")
    if eps.real <= 0:
        raise ValueError("background permittivity must be positive")
    return math.sqrt(eps.real) * omega / C


def _q_factors(kz, z, d, rs, rp):
    """Normalised field factors (s, p-tangential, p-normal) including the direct term."""
    a = np.exp(2j * kz * z)
    b = np.exp(2j * kz * (d - z))
    e = np.exp(2j * kz * d)
    (r1s, r2s), (r1p, r2p) = rs, rp
    qs = (1 + r1s * a) * (1 + r2s * b) / (1 - r1s * r2s * e)
    qpx = (1 - r1p * a) * (1 - r2p * b) / (1 - r1p * r2p * e)
    qpz = (1 + r1p * a) * (1 + r2p * b) / (1 - r1p * r2p * e)
    return qs, qpx, qpz


def _numerators(kz, z, d, rs, rp):
    a = np.exp(2j * kz * z)
    b = np.exp(2j * kz * (d - z))
    (r1s, r2s), (r1p, r2p) = rs, rp
    return (
        (1 + r1s * a) * (1 + r2s * b),
        (1 - r1p * a) * (1 - r2p * b),
        (1 + r1p * a) * (1 + r2p * b),
    )


def _pole_positions(r1r2: complex, d: float, k: float) -> np.ndarray:
    """k_z values in [0, k] where the round-trip phase is a multiple of 2 pi."""
    phase = np.angle(r1r2)
    m_lo = math.ceil((phase) / (2 * math.pi) - 1e-12)
    m_hi = math.floor((2 * k * d + phase) / (2 * math.pi) + 1e-12)
    m = np.arange(m_lo, m_hi + 1)
    kz = (2 * math.pi * m - phase) / (2 * d)
    return kz[(kz >= -1e-15 * k) & (kz <= k * (1 + 1e-15))].clip(0.0, k)


_GL_HI = np.polynomial.legendre.leggauss(40)
_GL_LO = np.polynomial.legendre.leggauss(20)


def _piecewise_quad(f, breaks, epsabs):
    """Integrate a vectorised ``f`` over consecutive break intervals.

    Each interval gets a 40-point Gauss-Legendre rule checked against a
    20-point one; intervals that disagree fall back to adaptive quadrature.
    """
    lo, hi = np.asarray(breaks[:-1]), np.asarray(breaks[1:])
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
    results = []
    for x, w in (_GL_HI, _GL_LO):
        nodes = mid[:, None] + half[:, None] * x[None, :]
        results.append(np.sum(f(nodes) * w[None, :], axis=1) * half)
    fine, coarse = results
    diff = np.abs(fine - coarse)
    bad = diff > epsabs / max(len(lo), 1)
    total = float(np.sum(fine[~bad]))
    err = float(np.sum(diff[~bad])) * 1e-3
    for a, b in zip(lo[bad], hi[bad]):
        val, e = integrate.quad(
            lambda q: float(f(np.array([q]))[0]), a, b, epsabs=epsabs, epsrel=1e-12, limit=400
        )
        total += val
        err += e
    return total, err


def _planar_im_greens(geometry: GeometrySpec, omega: float, with_decomposition: bool):
    k = _wavenumber(geometry, omega)
    d, z = geometry.length, geometry.position
    r1s, r1p = geometry.reflections(1)
    r2s, r2p = geometry.reflections(2)
    rs, rp = (r1s, r2s), (r1p, r2p)
    norm = 8 * math.pi * k * k
    scale = k / (6 * math.pi)
    epsabs = RTOL_TARGET * scale * 1e-2

    unimodular_s = abs(abs(r1s * r2s) - 1) < _UNIMODULAR_TOL
    unimodular_p = abs(abs(r1p * r2p) - 1) < _UNIMODULAR_TOL

    def propagating(kz, component):
        # real part of the k_z-resolved integrand on the real axis
        if not (unimodular_s or unimodular_p):
            qs, qpx, qpz = _q_factors(kz, z, d, rs, rp)
        else:
            # |r1 r2| = 1: keep the finite principal part, deltas added separately
            ns, npx, npz = _numerators(kz, z, d, rs, rp)
            es = np.exp(1j * (2 * kz * d + np.angle(r1s * r2s)))
            ep = np.exp(1j * (2 * kz * d + np.angle(r1p * r2p)))
            qs = _principal(ns, es) if unimodular_s else ns / (1 - r1s * r2s * np.exp(2j * kz * d))
            if unimodular_p:
                qpx, qpz = _principal(npx, ep), _principal(npz, ep)
            else:
                den = 1 - r1p * r2p * np.exp(2j * kz * d)
                qpx, qpz = npx / den, npz / den
        if component == "xx":
            return np.real(k * k * qs + kz * kz * qpx) / norm
        return np.real(2 * (k * k - kz * kz) * qpz) / norm

    def evanescent(kappa, component):
        qs, qpx, qpz = _q_factors(1j * kappa, z, d, rs, rp)
        if component == "xx":
            return float(np.imag(k * k * qs - kappa * kappa * qpx)) / norm
        return float(np.imag(2 * (k * k + kappa * kappa) * qpz)) / norm

    breaks = np.unique(
        np.concatenate(
            [
                [0.0, k],
                _pole_positions(r1s * r2s, d, k),
                _pole_positions(r1p * r2p, d, k),
            ]
        )
    )
    all_real = all(abs(np.imag(r)) == 0 for r in (r1s, r2s, r1p, r2p))

    out = {}
    err_total = 0.0
    for comp in ("xx", "zz"):
        val, err = _piecewise_quad(lambda q: propagating(q, comp), breaks, epsabs)
        if geometry.near_field and not all_real:
            # integrand decays as exp(-2 kappa min(z, d - z))
            kappa_max = 40.0 / min(z, d - z)
            ev, eerr = integrate.quad(
                lambda q: evanescent(q, comp), 0.0, kappa_max, epsabs=epsabs, epsrel=1e-10, limit=400
            )
            val += ev
            err += eerr
        val += _delta_terms(comp, k, z, d, rs, rp, unimodular_s, unimodular_p) / norm
        out[comp] = val
        err_total = max(err_total, err)

    rel = err_total / scale
    if rel > RTOL_HARD:
        raise QuadratureError("planar-cavity Green's tensor quadrature did not converge", rel)
    if rel > RTOL_TARGET:
        warnings.warn(f"Green's tensor quadrature reached only {rel:.2g} relative error", stacklevel=3)

    imG = np.diag([out["xx"], out["xx"], out["zz"]])
    decomposition = None
    if with_decomposition:
        kz = np.linspace(0.0, k, 257)[1:-1]
        decomposition = {
            "kz": kz,
            "xx": propagating(kz, "xx"),
            "zz": propagating(kz, "zz"),
        }
    return imG, rel, decomposition


def _principal(numerator, phase_factor):
    # lim_{rho->1-} of numerator / (1 - rho e^{i theta}) away from theta = 2 pi m
    theta = np.angle(phase_factor)
    half = 0.5 * theta
    with np.errstate(divide="ignore", invalid="ignore"):
        cot = np.cos(half) / np.sin(half)
    return 0.5 * numerator + 0.5j * numerator * cot


def _delta_terms(comp, k, z, d, rs, rp, unimodular_s, unimodular_p) -> float:
    """Standing-wave contributions pi * Re N(k_m) / (2d) at the round-trip poles."""
    total = 0.0
    for pol, unimodular in (("s", unimodular_s), ("p", unimodular_p)):
        if not unimodular:
            continue
        if pol == "s" and comp == "zz":
            continue
        r1r2 = rs[0] * rs[1] if pol == "s" else rp[0] * rp[1]
        for kz in _pole_positions(r1r2, d, k):
            ns, npx, npz = _numerators(kz, z, d, rs, rp)
            if comp == "xx":
                weight = np.real(k * k * ns) if pol == "s" else np.real(kz * kz * npx)
            else:
                weight = np.real(2 * (k * k - kz * kz) * npz)
            edge = 0.5 if (kz <= 1e-14 * k or kz >= k * (1 - 1e-14)) else 1.0
            total += edge * math.pi * weight / (2 * d)
    return total


def im_greens(geometry: GeometrySpec, omega: float, with_decomposition: bool = False) -> GreensEvaluation:
    """Im G(r, r, omega) at the emitter position, in 1/m."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    if geometry.kind is GeometryKind.FREE_SPACE:
        k = _wavenumber(geometry, omega)
        return GreensEvaluation(omega, np.eye(3) * k / (6 * math.pi))
    imG, rel, decomposition = _planar_im_greens(geometry, omega, with_decomposition)
    return GreensEvaluation(omega, imG, rel, decomposition)


def mode_spectrum(geometry: GeometrySpec, omega) -> np.ndarray:
    """Normal-incidence (transverse-mode resolved) Im G_xx for one mode of area A.

    This is the k_par = 0 slice of the planar-cavity integrand, weighted by the
    reciprocal-space cell (2 pi)^2 / A of a single transverse mode.  The z-z
    component vanishes at normal incidence.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    k = np.array([_wavenumber(geometry, w) for w in omega])
    if geometry.kind is GeometryKind.FREE_SPACE:
        return 1.0 / (2 * k * geometry.mode_area)
    r1s, r1p = geometry.reflections(1)
    r2s, r2p = geometry.reflections(2)
    qs, qpx, _ = _q_factors(k, geometry.position, geometry.length, (r1s, r2s), (r1p, r2p))
    return np.real(qs + qpx) / (4 * k * geometry.mode_area)


def _lorentzian(w, amp, w0, fwhm, offset):
    return amp / (1 + (2 * (w - w0) / fwhm) ** 2) + offset


def regularized(geometry: GeometrySpec, loss: float) -> GeometrySpec:
    """Replace perfect mirrors by |r| = 1 - loss so resonances acquire a finite width."""
    if not geometry.perfect_mirrors:
        return geometry
    from dataclasses import replace

    r = 1.0 - loss
    return replace(geometry, perfect_mirrors=False, r1=(-r, r), r2=(-r, r))


def extract_modes(
    geometry: GeometrySpec,
    dye: DyeParameters,
    scan_window: tuple[float, float],
    max_modes: int = 50,
    n_scan: int = 4001,
    perfect_mirror_loss: float = 1e-4,
    residual_threshold: float = 1e-2,
) -> list[CavityMode]:
    """Locate and fit the Lorentzian cavity resonances inside ``scan_window``.

    The Rabi frequency of each fitted resonance uses the peak of its resonant
    component: Omega_R^2 = 2 mu0 gamma omega^2 d.ImG.d / hbar.
    """
    lo, hi = scan_window
    if not 0 < lo < hi:
        raise ValueError("scan window must be positive and ordered")
    if dye.d01 <= 0:
        raise ValueError("dipole moment must be positive")
    if geometry.kind is GeometryKind.FREE_SPACE:
        return []
    geo = regularized(geometry, perfect_mirror_loss)
    u = np.asarray(dye.orientation)
    in_plane = u[0] ** 2 + u[1] ** 2
    if in_plane == 0:
        return []

    def spec(w):
        return in_plane * mode_spectrum(geo, w)

    grid = np.linspace(lo, hi, n_scan)
    values = spec(grid)
    peaks, _ = signal.find_peaks(values)
    modes: list[CavityMode] = []
    for p in peaks:
        w_lo, w_hi = grid[p - 1], grid[p + 1]
        res = optimize.minimize_scalar(
            lambda w: -spec(w)[0], bounds=(w_lo, w_hi), method="bounded",
            options={"xatol": 1e-15 * grid[p]},
        )
        w0 = float(res.x)
        peak = float(spec(w0)[0])
        left = max(0, p - n_scan // 50)
        right = min(n_scan - 1, p + n_scan // 50)
        base = float(min(values[left : right + 1]))
        half = base + 0.5 * (peak - base)
        try:
            wl = optimize.brentq(lambda w: spec(w)[0] - half, grid[left], w0)
            wr = optimize.brentq(lambda w: spec(w)[0] - half, w0, grid[right])
            fwhm0 = wr - wl
        except ValueError:
            fwhm0 = 2 * (w_hi - w_lo)
        window = np.linspace(w0 - 4 * fwhm0, w0 + 4 * fwhm0, 801)
        window = window[(window > 0)]
        sampled = spec(window)
        try:
            popt, _ = optimize.curve_fit(
                _lorentzian, window, sampled, p0=(peak - base, w0, fwhm0, base), maxfev=20000
            )
        except RuntimeError:
            popt = np.array([peak - base, w0, fwhm0, base])
        amp, wc, fwhm, _offset = popt
        fwhm = abs(fwhm)
        resid = float(
            np.linalg.norm(_lorentzian(window, *popt) - sampled) / np.linalg.norm(sampled)
        )
        degraded = resid > residual_threshold or amp <= 0
        if degraded:
            warnings.warn(
                f"Lorentzian fit near {wc:.6g} rad/s degraded (residual {resid:.2g})", stacklevel=2
            )
        if amp <= 0 or not lo <= wc <= hi:
            continue
        rabi = math.sqrt(2 * MU0 * fwhm * wc**2 * dye.d01**2 * amp / HBAR)
        modes.append(
            CavityMode(omega=wc, gamma=fwhm, Omega=rabi, fit_residual=resid, degraded=degraded)
        )
    modes.sort(key=lambda m: m.omega)
    return [replace(m, index=i) for i, m in enumerate(modes[:max_modes])]


def gamma_down_total(dye: DyeParameters, geometry: GeometrySpec, isotropic: bool = False) -> float:
    """Total spontaneous decay rate 2 (mu0/hbar) w10^2 d.ImG(w10).d in rad/s."""
    if dye.omega10 <= 0 or dye.d01 <= 0:
        raise ValueError("omega10 and d01 must be positive")
    ev = im_greens(geometry, dye.omega10)
    if isotropic:
        dgd = dye.d01**2 * np.trace(ev.imG) / 3
    else:
        dgd = ev.project(dye.dipole_vector)
    return 2 * MU0 / HBAR * dye.omega10**2 * dgd


def gamma_down_resonant(modes: list[CavityMode], dye: DyeParameters) -> tuple[float, float]:
    """Decay rate into the fitted cavity resonances and its Lamb shift.

    Both are Lorentzian sums; the shift is the closed-form Hilbert transform of
    each Lorentzian.
    """
    rate = 0.0
    shift = 0.0
    for m in modes:
        delta = m.omega - dye.omega10
        denom = delta * delta + 0.25 * m.gamma**2
        rate += m.Omega**2 * 0.25 * m.gamma / denom
        shift += 0.25 * m.Omega**2 * delta / denom
    return rate, shift
