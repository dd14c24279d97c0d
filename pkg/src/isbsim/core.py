"""Constants, unit helpers and the value types shared across the package.

Internally every frequency is an angular frequency in rad/s and every
quantity is SI.  Ordinary frequencies (Hz), microkelvin, micrometres and
Bohr radii only appear at the file/CLI boundary.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


class TruncationError(RuntimeError):
    """Raised when a mode sum cannot reach its tail tolerance under the cap."""

    def __init__(self, message: str, tail_weight: float = float("nan"), n_max: int = -1):
        super().__init__(message)
        self.tail_weight = tail_weight
        self.n_max = n_max


@dataclass(frozen=True)
class PhysicalConstants:
    # CODATA 2018; m(87Sr) = 86.9088774642 u
    hbar: float = 1.054571817e-34
    boltzmann_k: float = 1.380649e-23
    bohr_radius: float = 5.29177210903e-11
    mass_sr87: float = 86.9088774642 * 1.66053906660e-27

    def __post_init__(self):
        for name in ("hbar", "boltzmann_k", "bohr_radius", "mass_sr87"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be strictly positive")

    @property
    def planck_h(self) -> float:
        return TWO_PI * self.hbar


CONSTANTS = PhysicalConstants()


def to_angular(f):
    """Hz -> rad/s."""
    return np.multiply(f, TWO_PI) if isinstance(f, np.ndarray) else f * TWO_PI


def from_angular(w):
    """rad/s -> Hz."""
    return np.divide(w, TWO_PI) if isinstance(w, np.ndarray) else w / TWO_PI


def lamb_dicke(k_z: float, omega_z: float, mass: float = CONSTANTS.mass_sr87,
               hbar: float = CONSTANTS.hbar) -> float:
    """Axial Lamb-Dicke parameter ``k_z * sqrt(hbar / (m omega_z)) / sqrt(2)``.

    ``k_z = 0`` (probe perpendicular to the tube) gives 0; every other input
    must be strictly positive.
    """
    if k_z < 0 or omega_z <= 0 or mass <= 0:
        raise DomainError("lamb_dicke requires k_z >= 0, omega_z > 0 and mass > 0")
    return k_z * math.sqrt(hbar / (mass * omega_z)) / math.sqrt(2.0)


def wavevector_for_lamb_dicke(eta: float, omega_z: float, mass: float = CONSTANTS.mass_sr87,
                              hbar: float = CONSTANTS.hbar) -> float:
    """Inverse of :func:`lamb_dicke` with respect to ``k_z``."""
    if eta < 0 or omega_z <= 0 or mass <= 0:
        raise DomainError("invalid inputs for wavevector inversion")
    return eta * math.sqrt(2.0) / math.sqrt(hbar / (mass * omega_z))


@dataclass(frozen=True)
class TrapGeometry:
    """Harmonic trap of one lattice site (angular frequencies)."""

    omega_x: float
    omega_y: float
    omega_z: float
    eta_z: float = 0.0
    waist_perp: float = 30e-6

    def __post_init__(self):
        for name in ("omega_x", "omega_y", "omega_z"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be a positive finite angular frequency, got {v!r}")
        if not self.eta_z >= 0:
            raise DomainError("eta_z must be non-negative")
        if not self.waist_perp > 0:
            raise DomainError("waist_perp must be positive")

    @property
    def omega_perp(self) -> float:
        return math.sqrt(self.omega_x * self.omega_y)

    def oscillator_length_z(self, mass: float = CONSTANTS.mass_sr87) -> float:
        return math.sqrt(CONSTANTS.hbar / (mass * self.omega_z))

    def check_lamb_dicke(self, k_z: float, mass: float = CONSTANTS.mass_sr87,
                         rtol: float = 1e-6) -> bool:
        """True if ``eta_z`` is consistent with the probe projection ``k_z``."""
        return math.isclose(self.eta_z, lamb_dicke(k_z, self.omega_z, mass), rel_tol=rtol)

    @classmethod
    def from_hz(cls, fx: float, fy: float, fz: float, eta_z: float = 0.0,
                waist_perp: float = 30e-6) -> "TrapGeometry":
        return cls(to_angular(fx), to_angular(fy), to_angular(fz), eta_z, waist_perp)


@dataclass(frozen=True)
class ThermalState:
    """Motional temperatures (K) along X, Y, Z.  Zero means ground configuration."""

    temp_x: float = 0.0
    temp_y: float = 0.0
    temp_z: float = 0.0

    def __post_init__(self):
        for name in ("temp_x", "temp_y", "temp_z"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise DomainError(f"{name} must be >= 0")

    @classmethod
    def uniform(cls, temp: float) -> "ThermalState":
        return cls(temp, temp, temp)

    @property
    def is_zero(self) -> bool:
        return self.temp_x == 0 and self.temp_y == 0 and self.temp_z == 0


def boltzmann_alpha(omega: float, temp: float, constants: PhysicalConstants = CONSTANTS) -> float:
    """``hbar omega / (k_B T)``; ``inf`` at T = 0."""
    if temp == 0:
        return math.inf
    return constants.hbar * omega / (constants.boltzmann_k * temp)


class Direction(str, enum.Enum):
    GtoE = "GtoE"
    EtoG = "EtoG"


@dataclass(frozen=True)
class DriveParams:
    """Probe pulse.  ``duration`` and ``pulse_area_factor`` obey t * rabi_bare = s * pi."""

    rabi_bare: float
    pulse_area_factor: float = 1.0
    detuning: float = 0.0
    direction: Direction = Direction.GtoE
    duration: Optional[float] = None

    def __post_init__(self):
        if not self.rabi_bare > 0:
            raise DomainError("rabi_bare must be positive")
        if not self.pulse_area_factor > 0:
            raise DomainError("pulse_area_factor must be positive")
        t = self.pulse_area_factor * math.pi / self.rabi_bare
        if self.duration is None:
            object.__setattr__(self, "duration", t)
        elif not math.isclose(self.duration, t, rel_tol=1e-9):
            raise DomainError(
                f"duration {self.duration} inconsistent with s*pi/rabi_bare = {t}")
        object.__setattr__(self, "direction", Direction(self.direction))

    @classmethod
    def from_duration(cls, rabi_bare: float, duration: float, **kw) -> "DriveParams":
        if not duration > 0:
            raise DomainError("duration must be positive")
        return cls(rabi_bare, duration * rabi_bare / math.pi, duration=duration, **kw)

    def replace(self, **changes) -> "DriveParams":
        d = dict(rabi_bare=self.rabi_bare, pulse_area_factor=self.pulse_area_factor,
                 detuning=self.detuning, direction=self.direction)
        d.update(changes)
        return DriveParams(**d)


@dataclass(frozen=True)
class ModeConfiguration:
    """Occupied axial modes, stored strictly decreasing (Pauli exclusion)."""

    modes: tuple

    def __post_init__(self):
        modes = tuple(int(m) for m in self.modes)
        if len(modes) == 0:
            raise DomainError("a mode configuration needs at least one atom")
        if any(m < 0 for m in modes):
            raise DomainError("mode indices must be non-negative")
        if len(set(modes)) != len(modes):
            raise DomainError(f"duplicate mode indices in {modes}: identical fermions "
                              "cannot share an axial mode")
        object.__setattr__(self, "modes", tuple(sorted(modes, reverse=True)))

    @classmethod
    def lowest(cls, n_atoms: int) -> "ModeConfiguration":
        """Ground configuration {0, 1, ..., N-1}."""
        return cls(tuple(range(n_atoms)))

    @property
    def n_atoms(self) -> int:
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    def __len__(self):
        return len(self.modes)


@dataclass
class Spectrum:
    """Excitation fraction on a detuning grid (rad/s)."""

    detuning: np.ndarray
    excitation: np.ndarray
    sigma: Optional[np.ndarray] = None
    flags: Optional[np.ndarray] = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.detuning = np.asarray(self.detuning, dtype=float)
        self.excitation = np.asarray(self.excitation, dtype=float)
        if self.detuning.shape != self.excitation.shape or self.detuning.ndim != 1:
            raise DomainError("detuning and excitation must be 1-D arrays of equal length")
        if self.detuning.size > 1 and np.any(np.diff(self.detuning) <= 0):
            raise DomainError("detunings must be strictly increasing")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
            if self.sigma.shape != self.excitation.shape or np.any(self.sigma < 0):
                raise DomainError("sigma must be non-negative and match the grid")

    def __len__(self):
        return self.detuning.size

    @property
    def detuning_hz(self) -> np.ndarray:
        return from_angular(self.detuning)

    def out_of_range(self, tol: float = 0.0) -> np.ndarray:
        """Points whose excitation lies outside [0, 1] (flagged, never rejected)."""
        return (self.excitation < -tol) | (self.excitation > 1 + tol)


def detuning_grid(min_hz: float, max_hz: float, step_hz: float) -> np.ndarray:
    """Angular detuning grid from a Hz range; endpoints included when commensurate."""
    if not (max_hz > min_hz and step_hz > 0):
        raise DomainError("grid needs min < max and step > 0")
    n = int(math.floor((max_hz - min_hz) / step_hz + 1e-9)) + 1
    return to_angular(min_hz + step_hz * np.arange(n))


def as_grid(grid: Iterable[float]) -> np.ndarray:
    g = np.atleast_1d(np.asarray(grid, dtype=float))
    if g.ndim != 1:
        raise DomainError("grid must be one-dimensional")
    return g


def tube_trap_2d(eta_z: float = 0.07) -> TrapGeometry:
    """Central tube of the 2D lattice: 2pi x {110 kHz, 70 kHz, 800 Hz}."""
    return TrapGeometry.from_hz(110e3, 70e3, 800.0, eta_z=eta_z)


def tube_thermal_2d() -> ThermalState:
    return ThermalState.uniform(4.5e-6)


def pancake_trap_1d(eta_z: float = 0.0) -> TrapGeometry:
    """Central pancake of the 1D lattice: 2pi x {500 Hz, 80 kHz, 500 Hz}."""
    return TrapGeometry.from_hz(500.0, 80e3, 500.0, eta_z=eta_z)


def pancake_thermal_1d() -> ThermalState:
    return ThermalState.uniform(4e-6)


def scattering_length(a_over_a0: float, constants: PhysicalConstants = CONSTANTS) -> float:
    """Convert a scattering length in Bohr radii to metres."""
    return a_over_a0 * constants.bohr_radius


def strictly_decreasing(seq: Sequence[int]) -> bool:
    return all(a > b for a, b in zip(seq, seq[1:]))
