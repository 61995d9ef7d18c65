"""Stage-1 and stage-2 rates of the nested open-system reduction.

Stage 1 eliminates the cavity leakage, free-space emission and pump baths
(kappa, Gamma_down, Gamma_up).  Stage 2 eliminates the vibrational bath via
the polaron displacement correlator, whose damped half-Fourier transform K
gives the molecule-photon absorption and emission rates Gamma(+-delta).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, stats

from .greens import QuadratureError, extract_modes, gamma_down_resonant, gamma_down_total
from .params import C, EPS0, HBAR, KB, CavityMode, DyeParameters, GeometrySpec, LaserSpec, Lineshape
from .params import thermal_occupation

SERIES_TAIL = 1e-12


class InvariantError(ValueError):
    """A derived rate broke one of its physical invariants."""


@dataclass(frozen=True)
class CorrelationModel:
    """Thermal independent-boson model behind the displacement correlator."""

    S: float
    Omega: float
    T: float

    def __post_init__(self) -> None:
        if self.S < 0 or self.Omega <= 0 or self.T < 0:
            raise ValueError("need S >= 0, Omega > 0, T >= 0")

    @classmethod
    def from_dye(cls, dye: DyeParameters) -> "CorrelationModel":
        return cls(S=dye.S, Omega=dye.Omega, T=dye.T)

    @property
    def nbar(self) -> float:
        return thermal_occupation(self.Omega, self.T)


def kappa_from_mode(mode: CavityMode) -> float:
    """Photon loss rate of a Lorentzian mode equals its linewidth."""
    return mode.gamma


def gamma_up(laser: LaserSpec, dye: DyeParameters, t_obs: float | None = None) -> float:
    """Broadband incoherent pump rate pi d^2 I0 / (c eps0 hbar^2).

    I0 is the spectral intensity at omega10 per unit angular frequency.  The
    lineshape does not enter; ``t_obs`` only triggers a regime warning.
    """
    if laser.I0 < 0:
        raise ValueError("I0 must be >= 0")
    if t_obs is not None and laser.width * t_obs < 10.0:
        warnings.warn(
            f"gamma_L * t_obs = {laser.width * t_obs:.3g}: broadband limit not reached",
            stacklevel=2,
        )
    return math.pi * dye.d01**2 * laser.I0 / (C * EPS0 * HBAR**2)


_GL20 = np.polynomial.legendre.leggauss(20)
_GL10 = np.polynomial.legendre.leggauss(10)


def _gl(f, edges, rule):
    x, w = rule
    a, b = edges[:-1, None], edges[1:, None]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return np.sum(half * w * f(mid + half * x))


def lineshape_limit(lineshape: Lineshape | str, gamma_L: float, t: float) -> float:
    """Excitation integral int L(w) sin^2(w t/2)/w^2 dw for a unit-peak lineshape.

    Tends to pi t / 2 once gamma_L t >> 1.  Uses x = w t / 2 so the integrand
    is L(2x/t) sinc^2(x); Gauss-Legendre on each half period plus an averaged
    sin^2 = 1/2 tail for the Lorentzian.
    """
    if t <= 0 or gamma_L <= 0:
        raise ValueError("t and gamma_L must be positive")
    shape = Lineshape(lineshape)
    probe = LaserSpec(I0=0.0, lineshape=shape, width=gamma_L)
    half_w = 0.5 * gamma_L * t / 2  # half width in x units

    def f(x):
        return probe.profile(2 * x / t) * np.sinc(x / math.pi) ** 2

    if shape is Lineshape.RECTANGULAR:
        xmax = half_w
    elif shape is Lineshape.GAUSSIAN:
        xmax = 2 * half_w * 9.0
    else:
        xmax = max(200.0 * half_w, 2000.0)
    step = min(math.pi, 0.5 * half_w)
    n = int(math.ceil(xmax / step))
    if n > 2_000_000:
        raise QuadratureError("lineshape integral needs too many periods", float("nan"))
    edges = np.unique(np.append(np.minimum(np.arange(n + 1) * step, xmax), xmax))
    hi = _gl(f, edges, _GL20)
    lo = _gl(f, edges, _GL10)
    tail = 0.0
    if shape is Lineshape.LORENTZIAN:
        g = half_w  # Lorentzian half width in x
        # int_X^inf g^2/(x^2+g^2) / (2 x^2) dx in closed form
        X = xmax
        tail = 0.5 * (1 / X - (math.pi / 2 - math.atan(X / g)) / g)
    elif shape is Lineshape.GAUSSIAN:
        tail = 0.0
    err = abs(hi - lo)
    if err > 1e-8 * abs(hi):
        raise QuadratureError("lineshape integral did not converge", err / abs(hi))
    # symmetric integrand: double the half line, undo the substitution
    return float(2 * (hi + tail) * t / 2)


def light_shift(laser: LaserSpec, dye: DyeParameters) -> float:
    """(d^2 / 2 c eps0 hbar^2) PV int I(w)/(w - omega10) dw in rad/s.

    The principal value is taken as int_0^inf [I(w10+u) - I(w10-u)]/u du
    (symmetric pairing about the pole), in units of the laser width.
    """
    if laser.I0 == 0.0:
        return 0.0
    center = dye.omega10 if laser.center is None else laser.center
    g = laser.width
    off = (center - dye.omega10) / g
    shape = LaserSpec(I0=0.0, lineshape=laser.lineshape, width=1.0)

    def odd(x):
        return (shape.profile(x - off) - shape.profile(-x - off)) / x

    edge = 0.5 if laser.lineshape is Lineshape.RECTANGULAR else 1.0
    pts = sorted({p for p in (abs(off), abs(off) - edge, abs(off) + edge, abs(abs(off) - edge)) if p > 0})
    upper = abs(off) + 40.0
    opts = dict(limit=500, epsabs=1e-15, epsrel=1e-12)
    val = integrate.quad(odd, 0.0, upper, points=pts or None, **opts)[0]
    if laser.lineshape is Lineshape.LORENTZIAN:
        val += integrate.quad(odd, upper, np.inf, **opts)[0]
    return dye.d01**2 * laser.I0 / (2 * C * EPS0 * HBAR**2) * val


def displacement_correlation(model: CorrelationModel, tau):
    """<D^+ D(tau)> = exp{-4S[(1 - e^{i W t})(n+1) + (1 - e^{-i W t}) n]}."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be >= 0")
    a = 4 * model.S * (model.nbar + 1)
    b = 4 * model.S * model.nbar
    ph = np.exp(1j * model.Omega * tau)
    return np.exp(-a * (1 - ph) - b * (1 - np.conj(ph)))


def _poisson_support(mu: float) -> np.ndarray:
    if mu == 0.0:
        return np.array([1.0])
    top = int(stats.poisson.isf(0.1 * SERIES_TAIL, mu)) + 2
    return stats.poisson.pmf(np.arange(top + 1), mu)


def sideband_weights(model: CorrelationModel) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic weights w_k of the correlator, C(tau) = sum_k w_k e^{i k W tau}.

    w is the distribution of j - l with j ~ Poisson(4S(n+1)) (phonon
    emission) and l ~ Poisson(4S n) (absorption).  Returns (k, w_k).
    """
    pa = _poisson_support(4 * model.S * (model.nbar + 1))
    pb = _poisson_support(4 * model.S * model.nbar)
    w = np.convolve(pa, pb[::-1])
    k = np.arange(w.size) - (pb.size - 1)
    keep = w > 0
    k, w = k[keep], w[keep]
    if abs(w.sum() - 1.0) > 1e-10:
        raise QuadratureError("sideband series truncation failed", abs(w.sum() - 1.0))
    return k, w


def K_transform(model: CorrelationModel, Omega_nu: float, delta, Gamma: float):
    """Omega_nu^2 int_0^inf <D^+ D(tau)> e^{-i delta tau} e^{-Gamma tau/2} dtau (rad/s).

    Summed sideband by sideband; each harmonic contributes a complex
    Lorentzian w_k / (Gamma/2 - i (k W - delta)).  Gamma(delta) = 2 Re K.
    """
    if not Gamma > 0:
        raise ValueError("Gamma must be positive")
    if Omega_nu < 0:
        raise ValueError("Omega_nu must be >= 0")
    k, w = sideband_weights(model)
    d = np.asarray(delta, dtype=float)
    den = 0.5 * Gamma - 1j * (k * model.Omega - d[..., None])
    out = Omega_nu**2 * np.sum(w / den, axis=-1)
    return out if out.ndim else complex(out)


def absorption_emission(model: CorrelationModel, Omega_nu: float, delta: float, Gamma: float):
    """(Gamma(delta), Gamma(-delta), K''(delta), K''(-delta)) for one mode."""
    kp, km = K_transform(model, Omega_nu, np.array([delta, -delta]), Gamma)
    return 2 * kp.real, 2 * km.real, kp.imag, km.imag


def zero_temperature_orientation(S: float = 1.0, gamma_ratio: float = 1e-3) -> int:
    """Sign s fixing Gamma(d)/Gamma(-d) = exp(s beta hbar d), from the T = 0 sidebands.

    At T = 0 the molecule cannot absorb a photon below its zero-phonon line,
    so one of Gamma(+W), Gamma(-W) must be negligible; s points to the side
    that survives.
    """
    model = CorrelationModel(S=S, Omega=1.0, T=0.0)
    up = 2 * K_transform(model, 1.0, 1.0, gamma_ratio).real
    down = 2 * K_transform(model, 1.0, -1.0, gamma_ratio).real
    if min(up, down) > 1e-4 * max(up, down):
        raise InvariantError("T = 0 sideband asymmetry too weak to fix the orientation")
    return 1 if up > down else -1


@dataclass
class RateSet:
    """Every rate (rad/s) consumed by the dynamics layers, indexed by mode order.

    ``omega10`` and ``omega_nu`` are the frequencies after the stage-1 shifts
    have been absorbed; detunings are always recomputed from them.
    """

    omega10: float
    omega_nu: np.ndarray
    N: int
    kappa: np.ndarray
    gamma_up: float
    gamma_down_tot: float
    gamma_down_res: float
    gamma_down: float
    Gamma: np.ndarray
    gamma_abs: np.ndarray
    gamma_em: np.ndarray
    kpp_abs: np.ndarray
    kpp_em: np.ndarray
    delta_kappa: float = 0.0
    delta_gamma_up: float = 0.0
    delta_gamma_down_res: float = 0.0
    Omega_nu: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    _ARRAYS = ("omega_nu", "kappa", "Gamma", "gamma_abs", "gamma_em", "kpp_abs", "kpp_em")

    def __post_init__(self) -> None:
        for name in self._ARRAYS:
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        n = self.omega_nu.size
        if any(getattr(self, a).size != n for a in self._ARRAYS):
            raise ValueError("per-mode arrays must share one length")
        if self.Omega_nu is not None:
            self.Omega_nu = np.atleast_1d(np.asarray(self.Omega_nu, dtype=float))
            if self.Omega_nu.size != n:
                raise ValueError("Omega_nu must have one entry per mode")
        for a in ("kappa", "gamma_abs", "gamma_em"):
            if np.any(getattr(self, a) < 0):
                raise InvariantError(f"{a} has negative entries")
        if min(self.gamma_up, self.gamma_down, self.gamma_down_tot, self.gamma_down_res) < 0:
            raise InvariantError("negative stage-1 rate")
        if not np.array_equal(self.Gamma, self.kappa + self.gamma_down + self.gamma_up):
            raise InvariantError("Gamma must equal kappa + gamma_down + gamma_up")

    @property
    def n_modes(self) -> int:
        return int(self.omega_nu.size)

    @property
    def detuning(self) -> np.ndarray:
        return self.omega_nu - self.omega10

    def with_pump(self, gamma_up: float, dye: DyeParameters | None) -> "RateSet":
        """Same stage-1 rates with a new pump; stage-2 rates follow the new damping.

        Without stored couplings the stage-2 rates stay frozen.
        """
        Gamma = self.kappa + self.gamma_down + gamma_up
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__ if not f.startswith("_")}
        kw.update(gamma_up=float(gamma_up), Gamma=Gamma, meta=dict(self.meta))
        if self.Omega_nu is not None:
            if dye is None:
                raise ValueError("recomputing stage-2 rates needs the dye parameters")
            model = CorrelationModel.from_dye(dye)
            rows = [absorption_emission(model, o, d, G) for o, d, G in zip(self.Omega_nu, self.detuning, Gamma)]
            kw["gamma_abs"], kw["gamma_em"], kw["kpp_abs"], kw["kpp_em"] = (np.array(c) for c in zip(*rows))
        return RateSet(**kw)

    def hamiltonian_coefficients(self) -> dict:
        """Frequencies of the shifted system Hamiltonian (rad/s)."""
        return {
            "molecule": self.omega10 + float(np.sum(self.kpp_em)),
            "modes": self.omega_nu + self.N * self.kpp_abs,
            "cross": self.kpp_em - self.kpp_abs,
        }

    def to_dict(self) -> dict:
        out = {}
        for name in (
            "omega10", "N", "gamma_up", "gamma_down_tot", "gamma_down_res", "gamma_down",
            "delta_kappa", "delta_gamma_up", "delta_gamma_down_res",
        ):
            out[name] = getattr(self, name)
        for name in self._ARRAYS:
            out[name] = [float(x) for x in getattr(self, name)]
        if self.Omega_nu is not None:
            out["Omega_nu"] = [float(x) for x in self.Omega_nu]
        out.update(self.meta)
        return out

    def to_json(self) -> str:
        """Canonical JSON: sorted keys, shortest round-trip float repr."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "RateSet":
        known = {f for f in cls.__dataclass_fields__ if f != "meta"}
        meta = {k: v for k, v in data.items() if k not in known}
        kwargs = {k: v for k, v in data.items() if k in known}
        return cls(**kwargs, meta=meta)

    @classmethod
    def from_json(cls, text: str) -> "RateSet":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RateOptions:
    """Knobs of the nested pipeline that the physics leaves open.

    ``delta_kappa`` and ``delta_gamma_up`` are inputs (no spectral model of
    the leakage and pump couplings).  ``gamma_down`` overrides the
    non-resonant decay directly, which is the natural input when the modes
    are user supplied.  ``gamma_down_tot`` overrides the Green's tensor value.
    """

    delta_kappa: float = 0.0
    delta_gamma_up: float = 0.0
    gamma_down: float | None = None
    gamma_down_tot: float | None = None
    scan_window: tuple[float, float] | None = None
    max_modes: int = 50
    negative_tolerance: float = 1e-9


def assemble_rates(
    dye: DyeParameters,
    laser: LaserSpec,
    modes: Sequence[CavityMode] | None = None,
    geometry: GeometrySpec | None = None,
    options: RateOptions = RateOptions(),
) -> RateSet:
    """Run both reduction stages and collect a RateSet.

    Modes come from the caller or from ``extract_modes`` on ``geometry``.
    Stage 1 sets kappa per mode, Gamma_down and Gamma_up and shifts the bare
    frequencies; stage 2 then uses Gamma_nu = kappa_nu + Gamma_down +
    Gamma_up as the damping inside each K transform.
    """
    if modes is None:
        if geometry is None:
            raise ValueError("need either modes or a geometry")
        window = options.scan_window or (0.5 * dye.omega10, 1.5 * dye.omega10)
        modes = extract_modes(geometry, dye, window, max_modes=options.max_modes)
    modes = list(modes)
    if not modes:
        raise ValueError("no cavity modes: stage-2 rates need at least one")

    res, shift_res = gamma_down_resonant(modes, dye)
    if options.gamma_down is not None:
        if options.gamma_down < 0:
            raise InvariantError("gamma_down override must be >= 0")
        g_down = float(options.gamma_down)
        g_tot = g_down + res
    else:
        if options.gamma_down_tot is not None:
            g_tot = float(options.gamma_down_tot)
        else:
            g_tot = gamma_down_total(dye, geometry if geometry is not None else GeometrySpec())
        g_down = g_tot - res
        if g_down < -options.negative_tolerance * max(g_tot, res):
            raise InvariantError(
                f"resonant decay {res:.4g} exceeds total decay {g_tot:.4g}; check mode_area or the mode list"
            )
        g_down = max(g_down, 0.0)
    g_up = gamma_up(laser, dye)

    # the free-space Lamb shift is already inside omega10
    w10 = dye.omega10 - shift_res + options.delta_gamma_up
    w_nu = np.array([m.omega for m in modes]) + options.delta_kappa
    kappa = np.array([kappa_from_mode(m) for m in modes])
    Gamma = kappa + g_down + g_up

    model = CorrelationModel.from_dye(dye)
    rows = [
        absorption_emission(model, m.Omega, wn - w10, G)
        for m, wn, G in zip(modes, w_nu, Gamma)
    ]
    g_abs, g_em, k_abs, k_em = (np.array(col) for col in zip(*rows))
    return RateSet(
        omega10=float(w10),
        omega_nu=w_nu,
        N=dye.N,
        kappa=kappa,
        gamma_up=g_up,
        gamma_down_tot=float(g_tot),
        gamma_down_res=float(res),
        gamma_down=float(g_down),
        Gamma=Gamma,
        gamma_abs=g_abs,
        gamma_em=g_em,
        kpp_abs=k_abs,
        kpp_em=k_em,
        delta_kappa=options.delta_kappa,
        delta_gamma_up=options.delta_gamma_up,
        delta_gamma_down_res=float(shift_res),
        Omega_nu=np.array([m.Omega for m in modes]),
    )


@dataclass(frozen=True)
class KSReport:
    index: int
    delta: float
    ratio: float
    expected: float
    deviation: float
    in_regime: bool


def kennard_stepanov_check(rates: RateSet, dye: DyeParameters, orientation: int | None = None) -> list[KSReport]:
    """Per-mode |Gamma(d)/Gamma(-d) / exp(s beta hbar d) - 1|.

    Regime flag: Gamma_nu well below both Omega and k_B T / hbar.
    """
    s = zero_temperature_orientation() if orientation is None else orientation
    out = []
    for i, (d, ga, ge, G) in enumerate(zip(rates.detuning, rates.gamma_abs, rates.gamma_em, rates.Gamma)):
        if dye.T > 0:
            expected = math.exp(s * HBAR * d / (KB * dye.T))
            thermal = KB * dye.T / HBAR
        else:
            expected = math.inf if s * d > 0 else (1.0 if d == 0 else 0.0)
            thermal = 0.0
        ratio = ga / ge if ge > 0 else math.inf
        if math.isfinite(expected) and expected > 0 and math.isfinite(ratio):
            dev = abs(ratio / expected - 1)
        else:
            dev = 0.0 if ratio == expected else math.inf
        regime = G < 0.1 * dye.Omega and G < 0.1 * thermal
        out.append(KSReport(i, float(d), float(ratio), float(expected), float(dev), bool(regime)))
    return out
