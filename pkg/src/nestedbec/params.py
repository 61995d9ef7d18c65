"""Physical parameter containers shared by the geometry, rate and dynamics layers.

All frequencies are angular (rad/s), lengths in metres, dipoles in C m.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence, Union

import numpy as np
from scipy import constants as sc

HBAR = sc.hbar
KB = sc.k
C = sc.c
EPS0 = sc.epsilon_0
MU0 = sc.mu_0


class Lineshape(str, Enum):
    RECTANGULAR = "rectangular"
    GAUSSIAN = "gaussian"
    LORENTZIAN = "lorentzian"


class GeometryKind(str, Enum):
    FREE_SPACE = "free_space"
    PLANAR_CAVITY = "planar_cavity"


def thermal_occupation(omega: float, temperature: float) -> float:
    """Bose-Einstein occupation of a mode at ``omega``; 0 at T = 0."""
    if temperature <= 0.0:
        return 0.0
    kt = KB * temperature
    if kt == 0.0 or HBAR * omega > 700.0 * kt:
        return 0.0
    return 1.0 / np.expm1(HBAR * omega / kt)


@dataclass(frozen=True)
class DyeParameters:
    """Two-level molecule dressed by a single vibrational mode.

    ``omega10`` is the electronic transition frequency after the free-space
    Lamb shift has been absorbed into it.  ``S`` is the Huang-Rhys factor in
    the convention where the displacement operator is exp(2 sqrt(S)(b^+ - b)),
    so phonon sideband weights go as exp(-4S)(4S)^k/k!.
    """

    omega10: float
    Omega: float
    S: float
    d01: float
    T: float
    N: int = 1
    orientation: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.omega10 <= 0:
            raise ValueError("omega10 must be positive")
        if self.Omega <= 0:
            raise ValueError("Omega must be positive")
        if self.S < 0:
            raise ValueError("Huang-Rhys factor S must be >= 0")
        if self.d01 < 0:
            raise ValueError("dipole moment must be >= 0")
        if self.T < 0:
            raise ValueError("temperature must be >= 0")
        if self.N < 0:
            raise ValueError("N must be >= 0")
        u = np.asarray(self.orientation, dtype=float)
        norm = np.linalg.norm(u)
        if u.shape != (3,) or norm == 0:
            raise ValueError("orientation must be a non-zero 3-vector")
        object.__setattr__(self, "orientation", tuple(float(x) for x in u / norm))
        if self.Omega / self.omega10 > 0.1:
            warnings.warn(
                f"Omega/omega10 = {self.Omega / self.omega10:.3g} exceeds 0.1; "
                "the rotating-frame treatment of the vibrational mode degrades",
                stacklevel=2,
            )

    @property
    def dipole_vector(self) -> np.ndarray:
        return self.d01 * np.asarray(self.orientation)

    @property
    def nbar(self) -> float:
        return thermal_occupation(self.Omega, self.T)


@dataclass(frozen=True)
class LaserSpec:
    """Incoherent broadband pump.

    The spectrum reads I(w) = I0 * L(w - center) with L(0) = 1; ``center``
    defaults to the molecular transition, in which case I0 = I(omega10).
    """

    I0: float
    lineshape: Lineshape = Lineshape.GAUSSIAN
    width: float = 1.0e13
    center: float | None = None
    T_laser: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "lineshape", Lineshape(self.lineshape))
        if self.I0 < 0:
            raise ValueError("laser intensity I0 must be >= 0")
        if self.width <= 0:
            raise ValueError("laser width must be positive")
        if self.T_laser is not None and self.T_laser >= 0:
            raise ValueError("laser temperature must be negative (inverted bath)")

    def profile(self, omega, omega10: float = 0.0):
        """Dimensionless lineshape L(w) with unit peak at ``center`` (or ``omega10``)."""
        center = omega10 if self.center is None else self.center
        x = np.asarray(omega, dtype=float) - center
        g = self.width
        if self.lineshape is Lineshape.RECTANGULAR:
            return np.where(np.abs(x) <= 0.5 * g, 1.0, 0.0)
        if self.lineshape is Lineshape.GAUSSIAN:
            return np.exp(-0.5 * (x / g) ** 2)
        return (0.25 * g * g) / (x * x + 0.25 * g * g)


Reflection = Union[complex, tuple[complex, complex]]


@dataclass(frozen=True)
class GeometrySpec:
    """Electromagnetic environment of the emitter.

    Mirror reflection coefficients are given either as one complex number
    ``r`` (taken as the s-polarised amplitude, with r_p = -r_s as at normal
    incidence) or as an explicit ``(r_s, r_p)`` pair.  ``perfect_mirrors``
    overrides both with perfect-conductor values r_s = -1, r_p = +1.
    Reflection coefficients are angle independent.  Such a mirror model says
    nothing physical about evanescent waves, so the near-field (kz imaginary)
    part of the scattering integral is opt-in via ``near_field``; with it on,
    a complex r can produce non-passive results close to a mirror.
    """

    kind: GeometryKind = GeometryKind.FREE_SPACE
    length: float = 0.0
    r1: Reflection = 0.0
    r2: Reflection = 0.0
    perfect_mirrors: bool = False
    permittivity: Union[float, Callable[[float], complex]] = 1.0
    position: float = 0.0
    mode_area: float = 1.0e-10
    near_field: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", GeometryKind(self.kind))
        if self.kind is GeometryKind.PLANAR_CAVITY:
            if self.length <= 0:
                raise ValueError("cavity length must be positive")
            if not 0.0 < self.position < self.length:
                raise ValueError("emitter position must lie strictly inside the cavity")
            if self.mode_area <= 0:
                raise ValueError("mode_area must be positive")
            for r in (*self.reflections(1), *self.reflections(2)):
                if abs(r) > 1.0 + 1e-12:
                    raise ValueError(f"|r| = {abs(r)} exceeds 1")

    def reflections(self, mirror: int) -> tuple[complex, complex]:
        """(r_s, r_p) of mirror 1 (z = 0) or mirror 2 (z = d)."""
        if self.perfect_mirrors:
            return (-1.0 + 0j, 1.0 + 0j)
        r = self.r1 if mirror == 1 else self.r2
        if isinstance(r, (tuple, list)):
            return complex(r[0]), complex(r[1])
        return complex(r), -complex(r)

    def epsilon(self, omega: float) -> complex:
        eps = self.permittivity(omega) if callable(self.permittivity) else self.permittivity
        return complex(eps)


@dataclass(frozen=True)
class CavityMode:
    """One Lorentzian cavity resonance coupled to the dye.

    ``gamma`` is the full width at half maximum; ``Omega`` the vacuum Rabi
    frequency at the molecule.  The detuning is recomputed on demand.
    """

    omega: float
    gamma: float
    Omega: float
    index: int = 0
    fit_residual: float = 0.0
    degraded: bool = False

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ValueError("mode linewidth gamma must be positive")
        if self.Omega < 0:
            raise ValueError("Rabi frequency must be >= 0")
        if self.omega <= 0:
            raise ValueError("mode frequency must be positive")

    def detuning(self, omega10: float) -> float:
        return self.omega - omega10


def mode_ladder(
    omega_lowest: float,
    spacing: float,
    count: int,
    gamma: float | Sequence[float],
    Omega: float | Sequence[float],
) -> list[CavityMode]:
    """Equally spaced transverse-mode ladder, as in a harmonically trapped cavity."""
    gammas = np.broadcast_to(np.asarray(gamma, dtype=float), (count,))
    omegas = np.broadcast_to(np.asarray(Omega, dtype=float), (count,))
    return [
        CavityMode(
            omega=omega_lowest + j * spacing,
            gamma=float(gammas[j]),
            Omega=float(omegas[j]),
            index=j,
        )
        for j in range(count)
    ]

