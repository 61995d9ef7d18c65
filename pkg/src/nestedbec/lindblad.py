"""Exact small-system integration of the stage-1 and nested master equations.

Dissipators follow L[X]rho = X^+X rho + rho X^+X - 2 X rho X^+ and enter as
-(rate/2) L[X]rho, i.e. rate * D[X] in the usual notation.  Hamiltonians are
stored as H/hbar in rad/s in a frame rotating at a reference frequency.

Density matrices are vectorised row by row (numpy's default reshape), so
vec(A rho B) = (A kron B^T) vec(rho).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar
from scipy.sparse import linalg as spla

from . import __version__
from .params import CavityMode, DyeParameters
from .rates import CorrelationModel, K_transform, RateSet, absorption_emission

TRACE_ABORT = 1e-6
LEAK_LIMIT = 1e-6
DENSE_LIOUVILLE_MAX = 256


class DimensionError(ValueError):
    pass


class TraceDriftError(RuntimeError):
    pass


class SteadyStateError(RuntimeError):
    pass


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class HilbertLayout:
    """Tensor layout: molecules (2 levels each), photon modes, optional phonon mode."""

    n_molecules: int
    photon_cutoffs: tuple[int, ...]
    phonon_cutoff: int | None = None
    cap: int = 4096

    def __post_init__(self) -> None:
        object.__setattr__(self, "photon_cutoffs", tuple(int(c) for c in self.photon_cutoffs))
        if self.n_molecules < 0:
            raise DimensionError("n_molecules must be >= 0")
        if any(c < 1 for c in self.photon_cutoffs):
            raise DimensionError("photon cutoffs must be >= 1")
        if self.phonon_cutoff is not None:
            if self.phonon_cutoff < 1:
                raise DimensionError("phonon cutoff must be >= 1")
            if self.n_molecules != 1:
                raise DimensionError("explicit phonons are supported for a single molecule only")
        if self.dimension > self.cap:
            raise DimensionError(f"Hilbert dimension {self.dimension} exceeds cap {self.cap}")

    @property
    def factors(self) -> tuple[int, ...]:
        f = [2] * self.n_molecules + [c + 1 for c in self.photon_cutoffs]
        if self.phonon_cutoff is not None:
            f.append(self.phonon_cutoff + 1)
        return tuple(f)

    @property
    def dimension(self) -> int:
        return int(np.prod(self.factors)) if self.factors else 1

    @property
    def n_modes(self) -> int:
        return len(self.photon_cutoffs)

    def doubled(self) -> "HilbertLayout":
        return replace(self, photon_cutoffs=tuple(2 * c for c in self.photon_cutoffs))

    def _embed(self, slot: int, op) -> sp.csr_matrix:
        out = sp.identity(1, format="csr", dtype=complex)
        for j, n in enumerate(self.factors):
            out = sp.kron(out, op if j == slot else sp.identity(n, format="csr"), format="csr")
        return out

    def sigma(self, i: int) -> sp.csr_matrix:
        """Lowering operator |g><e| of molecule i (basis order g, e)."""
        return self._embed(i, sp.csr_matrix(np.array([[0, 1], [0, 0]], dtype=complex)))

    def a(self, nu: int) -> sp.csr_matrix:
        n = self.photon_cutoffs[nu] + 1
        return self._embed(self.n_molecules + nu, sp.diags(np.sqrt(np.arange(1, n)), 1, format="csr"))

    def b(self) -> sp.csr_matrix:
        if self.phonon_cutoff is None:
            raise DimensionError("layout has no phonon mode")
        n = self.phonon_cutoff + 1
        return self._embed(len(self.factors) - 1, sp.diags(np.sqrt(np.arange(1, n)), 1, format="csr"))

    def identity(self) -> sp.csr_matrix:
        return sp.identity(self.dimension, format="csr", dtype=complex)

    def basis_index(self, molecules: Sequence[int], photons: Sequence[int], phonon: int = 0) -> int:
        idx = list(molecules) + list(photons)
        if self.phonon_cutoff is not None:
            idx.append(phonon)
        return int(np.ravel_multi_index(idx, self.factors))

    def top_fock_population(self, rho: np.ndarray) -> np.ndarray:
        """Population of the highest Fock level of every photon mode."""
        p = np.real(np.diag(rho)).reshape(self.factors)
        out = []
        for nu in range(self.n_modes):
            ax = self.n_molecules + nu
            other = tuple(j for j in range(p.ndim) if j != ax)
            out.append(float(np.sum(p, axis=other)[-1]))
        return np.array(out)


@dataclass
class QuantumState:
    rho: np.ndarray
    time: float = 0.0

    @classmethod
    def basis(cls, layout: HilbertLayout, molecules: Sequence[int], photons: Sequence[int], phonon: int = 0):
        rho = np.zeros((layout.dimension, layout.dimension), dtype=complex)
        k = layout.basis_index(molecules, photons, phonon)
        rho[k, k] = 1.0
        return cls(rho)

    @classmethod
    def from_vector(cls, psi: np.ndarray) -> "QuantumState":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    def health(self) -> dict:
        rho = self.rho
        herm = float(np.max(np.abs(rho - rho.conj().T))) if rho.size else 0.0
        h = 0.5 * (rho + rho.conj().T)
        return {
            "trace_err": abs(complex(np.trace(rho)) - 1.0),
            "hermiticity": herm,
            "min_eig": float(np.linalg.eigvalsh(h)[0]),
            "purity": float(np.real(np.vdot(rho.conj().T, rho))),
        }


@dataclass
class Dissipator:
    rate: float
    op: sp.csr_matrix
    label: str


@dataclass
class LiouvillianSpec:
    """Coherent part H/hbar (rad/s, rotating frame) plus rate-weighted jump operators."""

    layout: HilbertLayout
    H: sp.csr_matrix
    dissipators: list[Dissipator]
    frame: float = 0.0
    rebuild: Callable[[HilbertLayout], "LiouvillianSpec"] | None = None
    _L: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        for d in self.dissipators:
            if d.rate < 0:
                raise ValueError(f"negative rate for {d.label}")
        self.dissipators = [d for d in self.dissipators if d.rate > 0]

    def superoperator(self) -> sp.csr_matrix:
        if self._L is None:
            n = self.layout.dimension
            eye = sp.identity(n, format="csr", dtype=complex)
            L = -1j * (sp.kron(self.H, eye) - sp.kron(eye, self.H.T))
            for d in self.dissipators:
                X = d.op
                XdX = (X.conj().T @ X).tocsr()
                L = L + d.rate * (sp.kron(X, X.conj()) - 0.5 * sp.kron(XdX, eye) - 0.5 * sp.kron(eye, XdX.T))
            self._L = sp.csr_matrix(L)
        return self._L

    def apply(self, rho: np.ndarray) -> np.ndarray:
        n = self.layout.dimension
        return (self.superoperator() @ rho.reshape(-1)).reshape(n, n)

    def max_scale(self) -> float:
        h = np.abs(self.H.diagonal()).max() if self.H.nnz else 0.0
        off = abs(self.H - sp.diags(self.H.diagonal())).sum(axis=1).max() if self.H.nnz else 0.0
        r = sum(d.rate * max(1.0, float(abs(d.op).max()) ** 2) for d in self.dissipators)
        return float(max(h, off, r))


# model builders


def build_liouvillian(
    layout: HilbertLayout,
    rates: RateSet,
    literal_double_sum: bool = False,
    frame: float | None = None,
) -> LiouvillianSpec:
    """Final nested master equation: number-conserving H'_S plus five dissipator families.

    Photonic loss is applied once per mode unless ``literal_double_sum`` asks
    for the once-per-(mode, molecule) reading.  The rotating frame defaults
    to omega10, or to the mean mode frequency when there are no molecules.
    """
    if layout.n_modes != rates.n_modes:
        raise DimensionError("layout and rate set disagree on the number of modes")
    N = layout.n_molecules
    coef = rates.hamiltonian_coefficients()
    if frame is not None:
        ref = frame
    elif N == 0 and layout.n_modes:
        ref = float(np.mean(rates.omega_nu))
    else:
        ref = rates.omega10
    H = sp.csr_matrix((layout.dimension, layout.dimension), dtype=complex)
    sig = [layout.sigma(i) for i in range(N)]
    a = [layout.a(nu) for nu in range(layout.n_modes)]
    ee = [(s.conj().T @ s).tocsr() for s in sig]
    nn = [(x.conj().T @ x).tocsr() for x in a]
    # H'_S uses the molecule count of the layout for the N K''(delta) mode shift
    mol = rates.omega10 + float(np.sum(rates.kpp_em)) - ref
    for i in range(N):
        H = H + mol * ee[i]
    for nu in range(layout.n_modes):
        H = H + (rates.omega_nu[nu] + N * rates.kpp_abs[nu] - ref) * nn[nu]
        for i in range(N):
            H = H + coef["cross"][nu] * (nn[nu] @ ee[i])
    diss: list[Dissipator] = []
    reps = N if literal_double_sum else 1
    for nu in range(layout.n_modes):
        diss.append(Dissipator(reps * rates.kappa[nu], a[nu], f"kappa[{nu}]"))
    for i in range(N):
        diss.append(Dissipator(rates.gamma_down, sig[i], f"gamma_down[{i}]"))
        diss.append(Dissipator(rates.gamma_up, sig[i].conj().T.tocsr(), f"gamma_up[{i}]"))
        for nu in range(layout.n_modes):
            diss.append(Dissipator(rates.gamma_abs[nu], (a[nu] @ sig[i].conj().T).tocsr(), f"abs[{nu},{i}]"))
            diss.append(Dissipator(rates.gamma_em[nu], (a[nu].conj().T @ sig[i]).tocsr(), f"em[{nu},{i}]"))

    def rebuild(lay: HilbertLayout) -> LiouvillianSpec:
        return build_liouvillian(lay, rates, literal_double_sum, frame)

    return LiouvillianSpec(layout, sp.csr_matrix(H), diss, frame=ref, rebuild=rebuild)


def build_stage1_liouvillian(
    layout: HilbertLayout,
    omega10: float,
    modes: Sequence[CavityMode],
    gamma_down: float = 0.0,
    gamma_up: float = 0.0,
    coupling_scale: float = 0.5,
    dye: DyeParameters | None = None,
    phonon_damping: float = 0.0,
    frame: float | None = None,
) -> LiouvillianSpec:
    """Stage-1 master equation with explicit molecule-photon coupling.

    H/hbar = sum w10 s^+s + sum w_nu a^+a + s Omega_nu (a s^+ + h.c.), with
    s = ``coupling_scale`` (0.5 for the bare Jaynes-Cummings convention, 1 for
    the post-polaron one).  With a phonon cutoff in the layout the vibrational
    mode is explicit: W b^+b + W sqrt(S) sz (b + b^+), whose relative
    displacement between the two electronic states is 2 sqrt(S).
    ``phonon_damping`` adds a relaxation jump (b + sqrt(S) sz) towards the
    instantaneous vibrational ground state.
    """
    if layout.n_modes != len(modes):
        raise DimensionError("layout and mode list disagree on the number of modes")
    ref = omega10 if frame is None else frame
    N = layout.n_molecules
    sig = [layout.sigma(i) for i in range(N)]
    a = [layout.a(nu) for nu in range(layout.n_modes)]
    H = sp.csr_matrix((layout.dimension, layout.dimension), dtype=complex)
    for i in range(N):
        H = H + (omega10 - ref) * (sig[i].conj().T @ sig[i])
    for nu, m in enumerate(modes):
        H = H + (m.omega - ref) * (a[nu].conj().T @ a[nu])
        for i in range(N):
            g = coupling_scale * m.Omega
            H = H + g * (a[nu] @ sig[i].conj().T + a[nu].conj().T @ sig[i])
    diss = []
    for nu, m in enumerate(modes):
        diss.append(Dissipator(m.gamma, a[nu], f"kappa[{nu}]"))
    for i in range(N):
        diss.append(Dissipator(gamma_down, sig[i], f"gamma_down[{i}]"))
        diss.append(Dissipator(gamma_up, sig[i].conj().T.tocsr(), f"gamma_up[{i}]"))
    if layout.phonon_cutoff is not None:
        if dye is None:
            raise ValueError("explicit phonons need the dye parameters")
        b = layout.b()
        sz = (sig[0].conj().T @ sig[0] - sig[0] @ sig[0].conj().T).tocsr()
        W, rs = dye.Omega, math.sqrt(dye.S)
        H = H + W * (b.conj().T @ b) + W * rs * (sz @ (b + b.conj().T))
        diss.append(Dissipator(phonon_damping, (b + rs * sz).tocsr(), "phonon"))

    def rebuild(lay: HilbertLayout) -> LiouvillianSpec:
        return build_stage1_liouvillian(
            lay, omega10, modes, gamma_down, gamma_up, coupling_scale, dye, phonon_damping, frame
        )

    return LiouvillianSpec(layout, sp.csr_matrix(H), diss, frame=ref, rebuild=rebuild)


# evolution


@dataclass
class Trajectory:
    times: np.ndarray
    n_ph: np.ndarray
    excitation: np.ndarray
    purity: np.ndarray
    trace_err: np.ndarray
    hermiticity: np.ndarray
    min_eig: np.ndarray
    final: QuantumState
    states: list[np.ndarray] | None = None
    truncation_leak: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def worst_health(self) -> dict:
        return {
            "trace_err": float(np.max(self.trace_err)),
            "hermiticity": float(np.max(self.hermiticity)),
            "min_eig": float(np.min(self.min_eig)),
        }

    def to_csv(self, path, meta: dict | None = None) -> None:
        m = {"version": __version__, **self.meta, **(meta or {})}
        with open(path, "w", newline="") as fh:
            fh.write("# " + ", ".join(f"{k}={v}" for k, v in sorted(m.items())) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"n_ph_{j}" for j in range(self.n_ph.shape[1])] + ["excitation", "purity", "trace_err"])
            for j, t in enumerate(self.times):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in self.n_ph[j]]
                           + [repr(float(self.excitation[j])), repr(float(self.purity[j])), repr(float(self.trace_err[j]))])


def _observables(layout: HilbertLayout):
    a_ops = [layout.a(nu) for nu in range(layout.n_modes)]
    n_diag = [np.real((x.conj().T @ x).diagonal()) for x in a_ops]
    e_diag = np.zeros(layout.dimension)
    for i in range(layout.n_molecules):
        s = layout.sigma(i)
        e_diag += np.real((s.conj().T @ s).diagonal())
    return n_diag, e_diag


def default_dt(L: LiouvillianSpec) -> float:
    return 0.1 / max(L.max_scale(), 1e-300)


def evolve(
    state: QuantumState,
    L: LiouvillianSpec,
    t_final: float,
    dt: float | None = None,
    sample_every: int = 1,
    keep_states: bool = False,
    check_positivity: bool = True,
) -> Trajectory:
    """Fixed-step RK4 on the vectorised master equation, no trace renormalisation."""
    n = L.layout.dimension
    if state.rho.shape != (n, n):
        raise DimensionError("state does not match the Liouvillian layout")
    dt_max = default_dt(L)
    if dt is None:
        dt = dt_max
    elif dt > dt_max * (1 + 1e-12):
        raise ValueError(f"dt = {dt:.3g} exceeds 0.1/max scale = {dt_max:.3g}")
    steps = max(1, int(math.ceil(t_final / dt - 1e-9)))
    dt = t_final / steps
    S = L.superoperator()
    n_diag, e_diag = _observables(L.layout)
    v = state.rho.reshape(-1).astype(complex).copy()
    rec = {k: [] for k in ("t", "n", "e", "p", "tr", "h", "m")}
    states = [] if keep_states else None
    t0 = state.time
    leak = 0.0

    def record(j, vec):
        rho = vec.reshape(n, n)
        d = np.real(np.diag(rho))
        rec["t"].append(t0 + j * dt)
        rec["n"].append([float(nd @ d) for nd in n_diag])
        rec["e"].append(float(e_diag @ d))
        rec["p"].append(float(np.real(np.vdot(rho.conj().T, rho))))
        rec["tr"].append(abs(complex(np.trace(rho)) - 1.0))
        rec["h"].append(float(np.max(np.abs(rho - rho.conj().T))))
        rec["m"].append(float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]) if check_positivity else 0.0)
        if keep_states:
            states.append(rho.copy())

    record(0, v)
    for j in range(1, steps + 1):
        k1 = S @ v
        k2 = S @ (v + 0.5 * dt * k1)
        k3 = S @ (v + 0.5 * dt * k2)
        k4 = S @ (v + dt * k3)
        v = v + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if j % sample_every == 0 or j == steps:
            record(j, v)
            if rec["tr"][-1] > TRACE_ABORT:
                raise TraceDriftError(
                    f"trace drift {rec['tr'][-1]:.2e} at t = {rec['t'][-1]:.3g}; reduce dt below {dt / 4:.3g}"
                )
            if L.layout.n_modes:
                leak = max(leak, float(L.layout.top_fock_population(v.reshape(n, n)).max()))
    final = QuantumState(v.reshape(n, n).copy(), t0 + steps * dt)
    if check_positivity and min(rec["m"]) < -1e-10:
        warnings.warn(f"density matrix lost positivity: min eigenvalue {min(rec['m']):.2e}", stacklevel=2)
    if leak > LEAK_LIMIT:
        warnings.warn(f"top Fock population {leak:.2e} exceeds {LEAK_LIMIT:g}", TruncationWarning, stacklevel=2)
    return Trajectory(
        times=np.array(rec["t"]),
        n_ph=np.array(rec["n"]).reshape(len(rec["t"]), -1),
        excitation=np.array(rec["e"]),
        purity=np.array(rec["p"]),
        trace_err=np.array(rec["tr"]),
        hermiticity=np.array(rec["h"]),
        min_eig=np.array(rec["m"]),
        final=final,
        states=states,
        truncation_leak=leak,
    )


def steady_state(L: LiouvillianSpec, guard_cutoff: bool = True) -> QuantumState:
    """Fixed point of the master equation with unit trace.

    Dense null space (with a uniqueness check) for small Liouville spaces,
    sparse LU with one row replaced by the trace condition otherwise, and
    evolution to stationarity if the factorisation fails.  If a photon mode
    populates its top Fock level above 1e-6 the cutoffs are doubled once.
    """
    rho = _steady(L)
    if guard_cutoff and L.layout.n_modes:
        leak = float(L.layout.top_fock_population(rho.rho).max())
        if leak > LEAK_LIMIT:
            if L.rebuild is not None:
                try:
                    bigger = L.rebuild(L.layout.doubled())
                except DimensionError:
                    bigger = None
                if bigger is not None:
                    warnings.warn(
                        f"top Fock population {leak:.2e}; re-solving with doubled photon cutoff",
                        TruncationWarning,
                        stacklevel=2,
                    )
                    out = _steady(bigger)
                    out.layout = bigger.layout  # type: ignore[attr-defined]
                    leak2 = float(bigger.layout.top_fock_population(out.rho).max())
                    if leak2 > LEAK_LIMIT:
                        warnings.warn(f"truncation still leaks {leak2:.2e}", TruncationWarning, stacklevel=2)
                    return out
            warnings.warn(f"top Fock population {leak:.2e} exceeds {LEAK_LIMIT:g}", TruncationWarning, stacklevel=2)
    rho.layout = L.layout  # type: ignore[attr-defined]
    return rho


def _steady(L: LiouvillianSpec) -> QuantumState:
    n = L.layout.dimension
    S = L.superoperator()
    scale = max(L.max_scale(), 1e-300)
    if n * n <= DENSE_LIOUVILLE_MAX:
        u, s, vh = np.linalg.svd(S.toarray() / scale)
        null = np.sum(s < 1e-10 * max(s[0], 1.0))
        if null != 1:
            raise SteadyStateError(f"steady state is not unique (null-space dimension {null})")
        rho = vh[-1].conj().reshape(n, n)
    else:
        trace_row = sp.csr_matrix(
            (np.ones(n), (np.zeros(n, dtype=int), np.arange(n) * (n + 1))), shape=(1, n * n)
        )
        A = sp.vstack([trace_row, S[1:] / scale]).tocsc()
        rhs = np.zeros(n * n, dtype=complex)
        rhs[0] = 1.0
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                vec = spla.splu(A).solve(rhs)
            rho = vec.reshape(n, n)
        except (RuntimeError, spla.MatrixRankWarning, MemoryError):
            rho = _steady_by_evolution(L)
        resid = np.linalg.norm(S @ rho.reshape(-1)) / scale
        if not np.isfinite(resid) or resid > 1e-8:
            rho = _steady_by_evolution(L)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    return QuantumState(rho, math.inf)


def _steady_by_evolution(L: LiouvillianSpec, tol: float = 1e-10, max_time_units: float = 1e6) -> np.ndarray:
    n = L.layout.dimension
    rho = np.eye(n, dtype=complex) / n
    slowest = min((d.rate for d in L.dissipators), default=0.0)
    if slowest <= 0:
        raise SteadyStateError("no dissipation: no unique steady state")
    chunk = 5.0 / slowest
    scale = L.max_scale()
    t = 0.0
    while t < max_time_units / slowest:
        tr = evolve(QuantumState(rho), L, chunk, sample_every=10**9, check_positivity=False)
        rho = tr.final.rho
        t += chunk
        if np.linalg.norm(L.apply(rho)) / scale < tol:
            return rho
    raise SteadyStateError("evolution did not reach stationarity")


# explicit-phonon oracle


@dataclass
class OracleReport:
    n_explicit: float
    n_nested: float
    relative_deviation: float
    phonon_leak: float
    details: dict = field(default_factory=dict)


def phonon_top_population(layout: HilbertLayout, rho: np.ndarray) -> float:
    p = np.real(np.diag(rho)).reshape(layout.factors)
    return float(np.sum(p, axis=tuple(range(p.ndim - 1)))[-1])


def explicit_steady_photons(
    dye: DyeParameters,
    mode: CavityMode,
    gamma_down: float,
    gamma_up: float,
    phonon_cutoff: int = 20,
    photon_cutoff: int = 3,
    phonon_damping: float | None = None,
) -> tuple[float, float]:
    """Steady photon number of the unreduced model and its phonon-truncation leak.

    Without vibrational relaxation a truncated phonon mode heats up under
    repeated vertical transitions, so ``phonon_damping`` defaults to the
    stage-2 damping Gamma = kappa + Gamma_down + Gamma_up.
    """
    if dye.N != 1:
        raise ValueError("the explicit-phonon oracle handles a single molecule")
    if phonon_damping is None:
        phonon_damping = mode.gamma + gamma_down + gamma_up
    lay = HilbertLayout(1, (photon_cutoff,), phonon_cutoff=phonon_cutoff, cap=100000)
    L = build_stage1_liouvillian(
        lay, dye.omega10, [mode], gamma_down, gamma_up, coupling_scale=1.0, dye=dye, phonon_damping=phonon_damping
    )
    rho = _steady(L).rho
    leak = phonon_top_population(lay, rho)
    if leak > LEAK_LIMIT:
        raise SteadyStateError(f"phonon truncation leaks {leak:.2e}; raise the phonon cutoff or the damping")
    top = float(lay.top_fock_population(rho).max())
    if top > LEAK_LIMIT:
        raise SteadyStateError(f"photon truncation leaks {top:.2e}; raise the photon cutoff")
    return float(np.real(np.diag(rho)) @ _observables(lay)[0][0]), leak


def nested_steady_photons(dye, mode, gamma_down, gamma_up, photon_cutoff: int = 3) -> float:
    rs = _nested_rates(dye, mode, gamma_down, gamma_up)
    st = steady_state(build_liouvillian(HilbertLayout(1, (photon_cutoff,)), rs))
    return photon_number(st, st.layout)  # type: ignore[attr-defined]


def explicit_phonon_oracle(
    dye: DyeParameters,
    mode: CavityMode,
    gamma_down: float,
    gamma_up: float,
    phonon_cutoff: int = 20,
    photon_cutoff: int = 3,
    phonon_damping: float | None = None,
) -> OracleReport:
    """Steady photon number of the unreduced (explicit phonon) model vs the nested model.

    Both models share kappa, Gamma_down, Gamma_up; the nested one replaces the
    phonon and the coherent coupling by Gamma(+-delta) from the displacement
    correlator, with the post-polaron coupling Omega_nu.
    """
    n_x, leak = explicit_steady_photons(dye, mode, gamma_down, gamma_up, phonon_cutoff, photon_cutoff, phonon_damping)
    n_n = nested_steady_photons(dye, mode, gamma_down, gamma_up, photon_cutoff)
    return OracleReport(n_x, n_n, abs(n_x / n_n - 1) if n_n > 0 else math.inf, leak)


def sideband_peaks(
    dye: DyeParameters,
    mode: CavityMode,
    gamma_down: float,
    gamma_up: float,
    orders: Sequence[int] = (0, 1, 2),
    phonon_cutoff: int = 20,
    photon_cutoff: int = 3,
    phonon_damping: float | None = None,
) -> list[tuple[int, float, float]]:
    """(k, explicit peak detuning, nested emission peak) near delta = -k Omega.

    The explicit peak maximises the unreduced steady photon number over the
    cavity detuning; the nested one maximises Gamma(-delta).
    """
    G = mode.gamma + gamma_down + gamma_up
    W = dye.Omega
    model = CorrelationModel.from_dye(dye)
    out = []
    for k in orders:
        lo, hi = -k * W - 2 * G, -k * W + 2 * G

        def neg_explicit(d):
            m = replace(mode, omega=dye.omega10 + d)
            return -explicit_steady_photons(dye, m, gamma_down, gamma_up, phonon_cutoff, photon_cutoff, phonon_damping)[0]

        def neg_emission(d):
            return -2 * K_transform(model, mode.Omega, -d, G).real

        opts = dict(bounds=(lo, hi), method="bounded", options={"xatol": G / 50})
        out.append((k, float(minimize_scalar(neg_explicit, **opts).x), float(minimize_scalar(neg_emission, **opts).x)))
    return out


def _nested_rates(dye, mode, gamma_down, gamma_up) -> RateSet:
    G = mode.gamma + gamma_down + gamma_up
    ga, ge, ka, ke = absorption_emission(CorrelationModel.from_dye(dye), mode.Omega, mode.omega - dye.omega10, G)
    return RateSet(
        omega10=dye.omega10, omega_nu=[mode.omega], N=1, kappa=[mode.gamma], gamma_up=gamma_up,
        gamma_down_tot=gamma_down, gamma_down_res=0.0, gamma_down=gamma_down, Gamma=[G],
        gamma_abs=[ga], gamma_em=[ge], kpp_abs=[ka], kpp_em=[ke],
    )


def photon_number(state: QuantumState, layout: HilbertLayout, nu: int = 0) -> float:
    return float(np.real(np.diag(state.rho)) @ _observables(layout)[0][nu])


def excitation(state: QuantumState, layout: HilbertLayout) -> float:
    return float(np.real(np.diag(state.rho)) @ _observables(layout)[1])
