"""Semiclassical rate equations for photon numbers and molecular excitation.

State: photon numbers n_nu per mode and the excited fraction f of N
identical molecules.  All rates come from a :class:`RateSet`.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .params import HBAR, KB, DyeParameters
from .rates import RateSet

RESIDUAL_TOL = 1e-12


class SteadyStateError(RuntimeError):
    pass


class MultipleRootsError(SteadyStateError):
    pass


class DegenerateFitError(ValueError):
    pass


@dataclass
class MeanFieldState:
    n: np.ndarray
    f: float
    time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.n = np.atleast_1d(np.asarray(self.n, dtype=float))
        self.f = float(self.f)

    def vector(self) -> np.ndarray:
        return np.append(self.n, self.f)

    @classmethod
    def from_vector(cls, y, time: float = 0.0, **meta) -> "MeanFieldState":
        y = np.asarray(y, dtype=float)
        return cls(y[:-1].copy(), float(y[-1]), time, dict(meta))

    @property
    def total_photons(self) -> float:
        return float(self.n.sum())


@dataclass(frozen=True)
class _Coeffs:
    kappa: np.ndarray
    ga: np.ndarray
    ge: np.ndarray
    N: float
    gu: float
    gd: float

    @classmethod
    def of(cls, rates: RateSet, dye: DyeParameters | None = None) -> "_Coeffs":
        N = float(dye.N if dye is not None else rates.N)
        return cls(rates.kappa, rates.gamma_abs, rates.gamma_em, N, rates.gamma_up, rates.gamma_down)

    @property
    def scale(self) -> float:
        return max(self.kappa.max(initial=0.0), self.gu, self.gd,
                   self.N * max(self.ga.max(initial=0.0), self.ge.max(initial=0.0)), 1e-300)


def _split(y):
    return y[:-1], y[-1]


def _terms(y, c: _Coeffs):
    n, f = _split(y)
    gain = c.N * c.ge * f * (n + 1)
    loss = c.N * c.ga * (1 - f) * n
    return n, f, gain, loss


def _rhs(y, c: _Coeffs) -> np.ndarray:
    n, f, gain, loss = _terms(y, c)
    dn = -c.kappa * n + gain - loss
    df = c.gu * (1 - f) - c.gd * f - np.sum(gain - loss) / c.N if c.N > 0 else c.gu * (1 - f) - c.gd * f
    return np.append(dn, df)


def _magnitudes(y, c: _Coeffs) -> np.ndarray:
    """Sum of absolute term sizes per equation; the natural residual scale."""
    n, f, gain, loss = _terms(y, c)
    mn = c.kappa * np.abs(n) + np.abs(gain) + np.abs(loss)
    mf = c.gu * abs(1 - f) + c.gd * abs(f)
    if c.N > 0:
        mf += np.sum(np.abs(gain) + np.abs(loss)) / c.N
    return np.append(mn, mf)


def _relative_residual(y, c: _Coeffs) -> float:
    F = np.abs(_rhs(y, c))
    m = _magnitudes(y, c)
    r = np.divide(F, m, out=np.zeros_like(F), where=m > 0)
    return float(r.max(initial=0.0))


def _jac(y, c: _Coeffs) -> np.ndarray:
    n, f = _split(y)
    M = n.size
    J = np.zeros((M + 1, M + 1))
    idx = np.arange(M)
    J[idx, idx] = -c.kappa + c.N * c.ge * f - c.N * c.ga * (1 - f)
    J[idx, M] = c.N * (c.ge * (n + 1) + c.ga * n)
    J[M, idx] = -(c.ge * f - c.ga * (1 - f))
    J[M, M] = -c.gu - c.gd - np.sum(c.ge * (n + 1) + c.ga * n)
    if c.N == 0:
        J[M, idx] = 0.0
        J[M, M] = -c.gu - c.gd
    return J


def rhs(state: MeanFieldState, rates: RateSet, dye: DyeParameters | None = None):
    """Time derivatives (dn/dt, df/dt)."""
    d = _rhs(state.vector(), _Coeffs.of(rates, dye))
    return d[:-1], float(d[-1])


def jacobian(state: MeanFieldState, rates: RateSet, dye: DyeParameters | None = None) -> np.ndarray:
    """Analytic Jacobian with respect to (n_0, ..., n_{M-1}, f)."""
    return _jac(state.vector(), _Coeffs.of(rates, dye))


def _project(y):
    y = y.copy()
    np.maximum(y[:-1], 0.0, out=y[:-1])
    y[-1] = min(max(y[-1], 0.0), 1.0)
    return y


def _newton(y, c: _Coeffs, tol: float, maxiter: int = 300):
    y = _project(y)
    for _ in range(maxiter):
        F = _rhs(y, c)
        res = _relative_residual(y, c)
        if res < tol:
            return y, res
        w = 1.0 / np.maximum(_magnitudes(y, c), 1e-300 * c.scale)
        merit0 = np.linalg.norm(F * w)
        try:
            step = np.linalg.solve(_jac(y, c), -F)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        lam = 1.0
        while lam > 1e-10:
            trial = _project(y + lam * step)
            if np.linalg.norm(_rhs(trial, c) * w) < (1 - 1e-4 * lam) * merit0:
                break
            lam *= 0.5
        else:
            return None
        y = trial
    return None


def _implicit_euler(y, c: _Coeffs, tol: float, max_steps: int = 20000):
    y = _project(y)
    h = 1.0 / c.scale
    eye = np.eye(y.size)
    for _ in range(max_steps):
        z = y.copy()
        ok = False
        for _ in range(30):
            G = z - y - h * _rhs(z, c)
            try:
                dz = np.linalg.solve(eye - h * _jac(z, c), -G)
            except np.linalg.LinAlgError:
                break
            z = _project(z + dz)
            if np.linalg.norm(dz) <= 1e-13 * (1 + np.linalg.norm(z)):
                ok = True
                break
        if not ok:
            h *= 0.25
            if h * c.scale < 1e-12:
                return None
            continue
        y = z
        h *= 2.0
        res = _relative_residual(y, c)
        if res < tol:
            return y, res
        if res < 1e-3:
            polished = _newton(y, c, tol)
            if polished is not None:
                return polished
    return None


def default_seed(rates: RateSet) -> MeanFieldState:
    """Empty modes with the excitation fraction set by pump and decay alone."""
    tot = rates.gamma_up + rates.gamma_down
    f = rates.gamma_up / tot if tot > 0 else 0.0
    return MeanFieldState(np.zeros(rates.n_modes), f)


def steady(
    rates: RateSet,
    dye: DyeParameters | None = None,
    pump: float | None = None,
    seed: MeanFieldState | None = None,
    tol: float = RESIDUAL_TOL,
    check_unique: bool = True,
) -> MeanFieldState:
    """Stationary point of the rate equations.

    Damped Newton with positivity projection, falling back to implicit
    Euler marching.  Convergence is judged per equation relative to the
    sum of the magnitudes of its terms.  With ``check_unique`` a second
    solve from the default seed must agree to 1e-6.
    """
    if pump is not None:
        rates = rates.with_pump(pump, dye)
    c = _Coeffs.of(rates, dye)
    start = seed if seed is not None else default_seed(rates)
    y0 = start.vector()
    if y0.size != rates.n_modes + 1:
        raise ValueError("seed has the wrong number of modes")
    out = _newton(y0, c, tol)
    method = "newton"
    if out is None:
        out = _implicit_euler(y0, c, tol)
        method = "implicit_euler"
    if out is None:
        raise SteadyStateError("mean-field steady state did not converge")
    y, res = out
    if check_unique and seed is not None:
        other = _newton(default_seed(rates).vector(), c, tol) or _implicit_euler(default_seed(rates).vector(), c, tol)
        if other is not None:
            z = other[0]
            if np.max(np.abs(z - y) / np.maximum(np.abs(y), 1e-30)) > 1e-6 and np.max(np.abs(z - y)) > 1e-12:
                raise MultipleRootsError("distinct seeds converged to different steady states")
    return MeanFieldState.from_vector(y, math.inf, residual=res, method=method)


def march(
    state: MeanFieldState,
    rates: RateSet,
    t_final: float,
    dye: DyeParameters | None = None,
    n_samples: int = 201,
    rtol: float = 1e-10,
):
    """Integrate the rate equations with a stiff solver.

    Returns (times, n[t, mode], f[t]).
    """
    c = _Coeffs.of(rates, dye)
    t = np.linspace(state.time, state.time + t_final, n_samples)
    atol = 1e-14 * max(1.0, state.n.max(initial=0.0))
    sol = integrate.solve_ivp(
        lambda _, y: _rhs(y, c), (t[0], t[-1]), state.vector(), method="Radau",
        t_eval=t, jac=lambda _, y: _jac(y, c), rtol=rtol, atol=atol,
    )
    if not sol.success:
        raise SteadyStateError(f"time marching failed: {sol.message}")
    Y = sol.y.T
    return sol.t, Y[:, :-1], Y[:, -1]


@dataclass
class ScanResult:
    pumps: np.ndarray
    n: np.ndarray
    f: np.ndarray
    ground_fraction: np.ndarray
    ground_index: int
    threshold: float | None
    status: str
    monotone: bool
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in sorted(self.meta.items()):
            buf.write(f"# {k}={v}\n")
        cols = ["pump", "f"] + [f"n_{i}" for i in range(self.n.shape[1])] + ["ground_fraction"]
        buf.write(",".join(cols) + "\n")
        for p, f, row, g in zip(self.pumps, self.f, self.n, self.ground_fraction):
            vals = [p, f, *row, g]
            buf.write(",".join(repr(float(v)) for v in vals) + "\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "pumps": [float(x) for x in self.pumps],
            "n": [[float(x) for x in row] for row in self.n],
            "f": [float(x) for x in self.f],
            "ground_fraction": [float(x) for x in self.ground_fraction],
            "ground_index": int(self.ground_index),
            "threshold": self.threshold,
            "status": self.status,
            "monotone": bool(self.monotone),
            **self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _ground_fraction(state: MeanFieldState, g: int) -> float:
    tot = state.total_photons
    return state.n[g] / tot if tot > 0 else 0.0


def pump_scan(
    rates: RateSet,
    dye: DyeParameters | None,
    pump_grid,
    fraction: float = 0.5,
    rtol: float = 1e-3,
) -> ScanResult:
    """Steady states along a pump grid with a refined condensation threshold.

    The threshold is the pump at which the lowest mode holds ``fraction``
    of all photons; it is bisected (geometrically when possible) to
    relative width ``rtol``.  Consecutive grid points are warm started.
    """
    pumps = np.sort(np.asarray(pump_grid, dtype=float))
    if pumps.size == 0 or pumps[0] < 0:
        raise ValueError("pump grid must be non-empty and non-negative")
    g = int(np.argmin(rates.omega_nu))
    states = []
    prev = None
    for p in pumps:
        s = steady(rates, dye, pump=p, seed=prev)
        states.append(s)
        prev = s
    frac = np.array([_ground_fraction(s, g) for s in states])
    monotone = bool(np.all(np.diff(frac) >= -1e-9))

    threshold = None
    status = "not_bracketed"
    above = np.nonzero(frac >= fraction)[0]
    if above.size and above[0] == 0:
        status = "below_grid"
    elif above.size:
        i = above[0]
        lo, hi = pumps[i - 1], pumps[i]
        seed = states[i - 1]
        while (hi - lo) > rtol * hi:
            mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)
            s = steady(rates, dye, pump=mid, seed=seed, check_unique=False)
            if _ground_fraction(s, g) >= fraction:
                hi = mid
            else:
                lo, seed = mid, s
        threshold = float(0.5 * (lo + hi))
        status = "bracketed"
    return ScanResult(
        pumps=pumps,
        n=np.array([s.n for s in states]),
        f=np.array([s.f for s in states]),
        ground_fraction=frac,
        ground_index=g,
        threshold=threshold,
        status=status,
        monotone=monotone,
    )


@dataclass(frozen=True)
class BEFit:
    T_eff: float
    mu: float
    residual: float
    thermal: bool


def be_fit(n, omega, T_ref: float | None = None, tolerance: float = 0.05, T_tolerance: float = 0.05) -> BEFit:
    """Fit n(omega) = 1 / (exp((hbar omega - mu) / k_B T) - 1).

    Seeded by linear regression of ln(1 + 1/n) against energy, refined by
    least squares on relative deviations.  ``residual`` is the RMS relative
    deviation.  ``thermal`` needs residual <= tolerance and T > 0, and when
    ``T_ref`` is given also |T / T_ref - 1| <= T_tolerance: a lossy cavity
    can show an exponential emission tail at the wrong temperature.
    """
    n = np.asarray(n, dtype=float)
    w = np.asarray(omega, dtype=float)
    if n.size < 2 or n.size != w.size:
        raise DegenerateFitError("need at least two modes with matching frequencies")
    if np.any(n <= 0) or not np.all(np.isfinite(n)):
        raise DegenerateFitError("populations must be positive and finite")
    if np.ptp(n) <= 1e-12 * n.max() or np.ptp(w) == 0:
        raise DegenerateFitError("flat population or frequency set; temperature undefined")
    w0 = w.min()
    E = HBAR * (w - w0)
    Es = E.max()
    x = E / Es
    y = np.log1p(1.0 / n)
    slope, icept = np.polyfit(x, y, 1)  # y = b x - b m, energies in units of Es

    def resid(p):
        b, m = p
        arg = b * (x - m)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            model = 1.0 / np.expm1(arg)
        return model / n - 1.0

    m0 = -icept / slope if slope != 0 else 0.0
    sol = optimize.least_squares(resid, [slope, m0], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    b, m = sol.x
    r = resid(sol.x)
    rms = float(np.sqrt(np.mean(r**2))) if np.all(np.isfinite(r)) else math.inf
    T = Es / (KB * b) if b != 0 else math.inf
    mu = HBAR * w0 + m * Es
    thermal = rms <= tolerance and T > 0
    if T_ref is not None:
        thermal = thermal and abs(T / T_ref - 1) <= T_tolerance
    return BEFit(float(T), float(mu), rms, bool(thermal))
