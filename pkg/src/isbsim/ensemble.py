"""Averaging single-site lineshapes over the populated lattice sites.

The transverse lattice beams have a Gaussian intensity profile, so a site at
(X, Y) sees

    omega_perp(X, Y) = omega_perp(0, 0) exp(-(X^2 + Y^2) / W^2)

with omega_perp = sqrt(omega_X omega_Y).  The factor is applied to omega_X and
omega_Y alike, leaving their ratio, omega_Z and eta_Z unchanged.

Sampling is reproducible per sample: sample i draws from
``default_rng([seed, i])``, so any chunking or worker count yields the same
sites, and the reduction always runs over the stacked array in sample order.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .core import DomainError, Spectrum, TrapGeometry, as_grid
from .thermal import (ThermalLineshapeConfig, isb_closed_form, thermal_lineshape_bruteforce)
from .spinmodel import rabi_kernel

LATTICE_SPACING_2D = 406.5e-9   # half of the 813 nm magic wavelength
_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


class GeometryKind(str, enum.Enum):
    ONE_D = "1D"
    TWO_D = "2D"


class Placement(str, enum.Enum):
    LATTICE = "lattice"   # rows uniform along Y, Gaussian columns along X
    UNIFORM = "uniform"   # occupied tubes uniform over a disk


class Engine(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    BRUTE_FORCE = "brute_force"


@dataclass(frozen=True)
class LatticeDistribution:
    center_trap: TrapGeometry
    geometry_kind: GeometryKind = GeometryKind.TWO_D
    sigma_h: float = 8e-6
    sigma_v: float = 30e-6
    n_rows: int = 100
    row_spacing: float = LATTICE_SPACING_2D
    waist_perp: float = 30e-6
    occupancy_model: Dict[int, float] = field(default_factory=lambda: {2: 1.0})
    placement: Placement = Placement.LATTICE
    occupied_radius: Optional[float] = None    # defaults to waist_perp

    def __post_init__(self):
        object.__setattr__(self, "geometry_kind", GeometryKind(self.geometry_kind))
        object.__setattr__(self, "placement", Placement(self.placement))
        if not (self.sigma_h > 0 and self.sigma_v > 0 and self.waist_perp > 0
                and self.row_spacing > 0):
            raise DomainError("sigma_h, sigma_v, row_spacing and waist_perp must be positive")
        if self.n_rows < 1:
            raise DomainError("n_rows must be >= 1")
        if self.occupied_radius is not None and not self.occupied_radius >= 0:
            raise DomainError("occupied_radius must be non-negative")
        occ = {int(k): float(v) for k, v in dict(self.occupancy_model).items()}
        if any(k < 1 for k in occ) or any(v < 0 for v in occ.values()):
            raise DomainError("occupancy keys must be >= 1 and fractions non-negative")
        if sum(occ.values()) > 1 + 1e-12:
            raise DomainError("occupancy fractions must sum to at most 1")
        object.__setattr__(self, "occupancy_model", occ)

    @property
    def radius(self) -> float:
        return self.waist_perp if self.occupied_radius is None else self.occupied_radius


@dataclass(frozen=True)
class SiteSample:
    position: tuple
    trap: TrapGeometry
    n_atoms: int
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise DomainError("sample weight must be positive")


def local_trap(center: TrapGeometry, x: float, y: float, waist: float) -> TrapGeometry:
    """Trap at transverse position (x, y) under a Gaussian beam of waist ``waist``."""
    if not waist > 0:
        raise DomainError("waist must be positive")
    factor = math.exp(-(x * x + y * y) / (waist * waist))
    return replace(center, omega_x=center.omega_x * factor, omega_y=center.omega_y * factor)


def _occupancy(dist: LatticeDistribution):
    occ = {k: v for k, v in dist.occupancy_model.items() if v > 0}
    if not occ:
        raise DomainError("occupancy model is empty")
    keys = np.array(sorted(occ))
    probs = np.array([occ[k] for k in keys])
    return keys, probs / probs.sum()


def _position(dist: LatticeDistribution, rng: np.random.Generator):
    if dist.geometry_kind == GeometryKind.ONE_D:
        # pancakes stack along the lattice axis; no transverse offset
        return 0.0, float(rng.normal(0.0, dist.sigma_v))
    if dist.placement == Placement.UNIFORM:
        r = dist.radius * math.sqrt(rng.random())
        phi = 2 * math.pi * rng.random()
        return r * math.cos(phi), r * math.sin(phi)
    row = int(rng.integers(dist.n_rows))
    y = (row - 0.5 * (dist.n_rows - 1)) * dist.row_spacing
    return float(rng.normal(0.0, dist.sigma_h)), y


def _stratified_position(dist: LatticeDistribution, i: int, n: int):
    q = (i + 0.5) / n
    if dist.geometry_kind == GeometryKind.ONE_D:
        return 0.0, float(dist.sigma_v * norm.ppf(q))
    if dist.placement == Placement.UNIFORM:
        r = dist.radius * math.sqrt(q)
        phi = i * _GOLDEN_ANGLE
        return r * math.cos(phi), r * math.sin(phi)
    row = (i * 37) % dist.n_rows
    y = (row - 0.5 * (dist.n_rows - 1)) * dist.row_spacing
    return float(dist.sigma_h * norm.ppf(q)), y


def _site_local(dist: LatticeDistribution, x: float, y: float) -> TrapGeometry:
    if dist.geometry_kind == GeometryKind.ONE_D:
        return dist.center_trap
    return local_trap(dist.center_trap, x, y, dist.waist_perp)


def sample_sites(dist: LatticeDistribution, n_samples: int, seed: int = 0,
                 stratified: bool = False) -> list:
    """Draw ``n_samples`` occupied sites.

    Stratified sampling replaces random positions by fixed quantiles (equal
    area annuli for the disk, Gaussian quantiles for columns) and occupancies
    by their cumulative quantiles; the result does not depend on ``seed``.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    keys, probs = _occupancy(dist)
    cum = np.cumsum(probs)
    out = []
    for i in range(n_samples):
        if stratified:
            x, y = _stratified_position(dist, i, n_samples)
            n_at = int(keys[min(np.searchsorted(cum, (i + 0.5) / n_samples), keys.size - 1)])
        else:
            rng = np.random.default_rng([int(seed), i])
            x, y = _position(dist, rng)
            n_at = int(keys[min(np.searchsorted(cum, rng.random(), side="right"),
                                keys.size - 1)])
        out.append(SiteSample((x, y), _site_local(dist, x, y), n_at, 1.0))
    return out


def site_spectrum(sample: SiteSample, template: ThermalLineshapeConfig, grid: np.ndarray,
                  engine: Engine = Engine.CLOSED_FORM) -> Spectrum:
    """Per-site excitation fraction.  Singly occupied sites show only the carrier."""
    if sample.n_atoms == 1:
        vals = np.zeros(grid.size)
        if template.include_carrier:
            vals = rabi_kernel(template.drive.duration, grid, template.drive.rabi_bare)
        return Spectrum(grid, vals)
    if sample.n_atoms != 2:
        raise DomainError(f"site with N={sample.n_atoms}: only N <= 2 sites are modelled")
    cfg = template.with_trap(sample.trap)
    if Engine(engine) == Engine.CLOSED_FORM:
        spec = isb_closed_form(cfg, grid)
        if template.include_carrier:
            spec.excitation = spec.excitation + rabi_kernel(cfg.drive.duration, grid,
                                                            cfg.drive.rabi_bare)
        return spec
    return thermal_lineshape_bruteforce(cfg, grid)


def average_spectra(samples: Sequence[SiteSample], spectra: Sequence[Spectrum]) -> Spectrum:
    """Atom-weighted mean of per-site spectra with its Monte Carlo standard error."""
    if len(samples) != len(spectra) or not samples:
        raise DomainError("need one spectrum per sample")
    grid = spectra[0].detuning
    vals = np.stack([s.excitation for s in spectra])
    w = np.array([s.weight * s.n_atoms for s in samples], dtype=float)
    wn = w / w.sum()
    mean = wn @ vals
    n = len(samples)
    if n > 1:
        contrib = (w / w.mean())[:, None] * vals
        sigma = contrib.std(axis=0, ddof=1) / math.sqrt(n)
    else:
        sigma = np.zeros(grid.size)
    notes = []
    for s in spectra:
        for msg in s.warnings:
            if msg not in notes:
                notes.append(msg)
    flags = None
    if all(s.flags is not None for s in spectra):
        flags = np.bitwise_or.reduce(np.stack([s.flags for s in spectra]), axis=0)
    return Spectrum(grid, mean, sigma=sigma, flags=flags, warnings=notes)


def ensemble_average(dist: LatticeDistribution, template: ThermalLineshapeConfig, grid,
                     n_samples: int, seed: int = 0, engine: Engine = Engine.CLOSED_FORM,
                     stratified: bool = False, workers: int = 1) -> Spectrum:
    """Trap-averaged spectrum over ``n_samples`` sites, each with its local trap."""
    grid = as_grid(grid)
    samples = sample_sites(dist, n_samples, seed, stratified)
    fn: Callable = lambda s: site_spectrum(s, template, grid, engine)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            spectra = list(pool.map(fn, samples))
    else:
        spectra = [fn(s) for s in samples]
    return average_spectra(samples, spectra)
