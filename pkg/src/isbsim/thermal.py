"""Finite-temperature two-atom lineshapes.

Two fermions occupy axial modes n1 > n2 with Boltzmann weight
exp(-alpha (n1 + n2)), alpha = hbar omega_Z / (k_B T_Z).  Transverse thermal
occupation enters only as the renormalisation theta_X theta_Y of the bare
interaction scale u, so a pair interacts with

    U_n = theta_X theta_Y u I(n1, n2).

Two per-pair engines are provided: the exact 4x4 pulse evolution and the
single-sideband formula f(t, delta - U_n, Delta Omega_n).  The closed-form
thermal sideband is the continuum limit of the latter.

All spectra are excitation fractions (excited atoms per atom), so pair counts
are divided by 2.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import integrate

from .core import (CONSTANTS, Direction, DomainError, DriveParams, Spectrum, ThermalState,
                   TrapGeometry, TruncationError, as_grid, boltzmann_alpha)
from .overlap import (ASYMPTOTIC_SWITCH, DEFAULT_TRUNCATION, InteractionParams, OverlapKind,
                      ThermalModel, TruncationPolicy, mode_cutoff, pair_overlaps,
                      transverse_factor)
from .spinmodel import _pair_dot, collective_sz, rabi_frequency_mode, rabi_kernel, single_sx

# per-point validity bits carried in Spectrum.flags
FLAG_NEAR_CARRIER = 1     # |delta| < 5 Omega^B
FLAG_COLD_AXIAL = 2       # k_B T_Z < 10 hbar omega_Z
FLAG_LONG_PULSE = 4       # t <Delta Omega> >= 1
CARRIER_CUT = 5.0
ALPHA_MAX = 0.1           # k_B T_Z >> hbar omega_Z read as a factor of 10

_PAIR_CHUNK = 131072
_GRID_CHUNK = 64


class Fidelity(str, enum.Enum):
    EXACT_PAIR = "exact_pair"
    SIDEBAND_FORMULA = "sideband_formula"


@dataclass(frozen=True)
class ThermalLineshapeConfig:
    trap: TrapGeometry
    thermal: ThermalState
    interaction: InteractionParams
    drive: DriveParams
    truncation: TruncationPolicy = DEFAULT_TRUNCATION
    fidelity: Fidelity = Fidelity.SIDEBAND_FORMULA
    overlap_kind: OverlapKind = OverlapKind.K0_FAR
    include_carrier: bool = False
    # None picks the engine default: linear Delta Omega for the sideband
    # formula, Laguerre Rabi frequencies for the exact pair
    linearized_rabi: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "fidelity", Fidelity(self.fidelity))
        object.__setattr__(self, "overlap_kind", OverlapKind(self.overlap_kind))

    @classmethod
    def from_scattering_length(cls, a: float, trap: TrapGeometry, thermal: ThermalState,
                               drive: DriveParams,
                               model: ThermalModel = ThermalModel.ASYMPTOTIC,
                               **kw) -> "ThermalLineshapeConfig":
        policy = kw.get("truncation", DEFAULT_TRUNCATION)
        inter = InteractionParams.from_scattering_length(a, trap, thermal, model, policy)
        return cls(trap, thermal, inter, drive, **kw)

    def with_trap(self, trap: TrapGeometry) -> "ThermalLineshapeConfig":
        """Same physics at a different site; the interaction is recomputed for ``trap``."""
        inter = InteractionParams.from_scattering_length(
            self.interaction.a_eg_minus, trap, self.thermal, self.interaction.model,
            self.truncation)
        return replace(self, trap=trap, interaction=inter)

    def replace(self, **changes) -> "ThermalLineshapeConfig":
        return replace(self, **changes)

    @property
    def alpha(self) -> float:
        return boltzmann_alpha(self.trap.omega_z, self.thermal.temp_z)

    @property
    def linearized(self) -> bool:
        if self.linearized_rabi is not None:
            return self.linearized_rabi
        return self.fidelity == Fidelity.SIDEBAND_FORMULA


# --------------------------------------------------------------------------
# pair ensemble


@dataclass
class PairTerms:
    """Boltzmann-weighted pair terms after merging pairs with identical parameters."""

    n1: np.ndarray
    n2: np.ndarray
    weight: np.ndarray       # normalised to unit sum
    u: np.ndarray            # U_n (rad/s)
    n_max: int
    tail_weight: float


def _pair_grid(alpha: float, policy: TruncationPolicy):
    if alpha == math.inf:
        return np.array([1]), np.array([0]), np.array([1.0]), 1, 0.0
    n_max = mode_cutoff(alpha, policy)
    n1, n2 = np.triu_indices(n_max + 1, k=1)
    n1, n2 = n2, n1          # n1 > n2
    w = np.exp(-alpha * (n1 + n2))
    # weight of the discarded region relative to the infinite sum
    q = math.exp(-alpha)
    z_inf = q / ((1 - q) * (1 - q * q))
    tail = max(0.0, 1.0 - float(w.sum()) / z_inf)
    return n1, n2, w, n_max, tail


def pair_terms(cfg: ThermalLineshapeConfig, merge: bool = True) -> PairTerms:
    """Enumerate pairs n1 > n2 up to the truncation cut with weights and U_n.

    With ``merge`` and a distance-only overlap rule (K0 or K0_FAR beyond the
    switch), pairs sharing n1 - n2 collapse onto one term at the smallest n2;
    this is exact for the sideband formula, whose parameters depend on the
    difference alone.
    """
    alpha = cfg.alpha
    n1, n2, w, n_max, tail = _pair_grid(alpha, cfg.truncation)
    if tail > cfg.truncation.tail_weight_tol * 10:
        raise TruncationError(f"pair tail weight {tail:.3g} above tolerance", tail, n_max)
    u_eff = cfg.interaction.u * transverse_factor(cfg.trap, cfg.thermal, cfg.interaction.model,
                                                   cfg.truncation)
    kind = cfg.overlap_kind
    d = n1 - n2
    if merge and kind in (OverlapKind.K0, OverlapKind.K0_FAR):
        far = d >= (1 if kind == OverlapKind.K0 else ASYMPTOTIC_SWITCH)
        near = ~far
        dd = d[far]
        wd = np.bincount(dd, weights=w[far])
        keep_d = np.nonzero(wd)[0]
        n1 = np.concatenate([n1[near], keep_d])
        n2 = np.concatenate([n2[near], np.zeros(keep_d.size, dtype=n2.dtype)])
        w = np.concatenate([w[near], wd[keep_d]])
        u = np.empty(n1.size)
        m = near.sum()
        u[:m] = u_eff * pair_overlaps(n1[:m], n2[:m], OverlapKind.EXACT) if m else u[:m]
        u[m:] = u_eff / np.sqrt(math.pi * keep_d)
    else:
        u = u_eff * pair_overlaps(n1, n2, kind)
    return PairTerms(n1, n2, w / w.sum(), u, n_max, tail)


def _delta_omega(n1, n2, cfg: ThermalLineshapeConfig) -> np.ndarray:
    """Coupling of the pair to its singlet, (Omega_n1 - Omega_n2)/sqrt(2)."""
    eta, rb = cfg.trap.eta_z, cfg.drive.rabi_bare
    if cfg.linearized:
        return rb * eta ** 2 * (np.asarray(n1) - np.asarray(n2)) / math.sqrt(2.0)
    o1 = rabi_frequency_mode(np.asarray(n1), eta, rb)
    o2 = rabi_frequency_mode(np.asarray(n2), eta, rb)
    return (o2 - o1) / math.sqrt(2.0)


def _sideband_formula(cfg: ThermalLineshapeConfig, grid: np.ndarray) -> np.ndarray:
    terms = pair_terms(cfg, merge=not cfg.include_carrier)
    t = cfg.drive.duration
    sign = 1.0 if cfg.drive.direction == Direction.GtoE else -1.0
    dom = _delta_omega(terms.n1, terms.n2, cfg)
    interacting = cfg.interaction.u != 0
    out = np.zeros(grid.size)
    for start in range(0, grid.size, _GRID_CHUNK):
        g = grid[start:start + _GRID_CHUNK, None]
        acc = np.zeros(g.shape[0])
        if interacting:
            acc += rabi_kernel(t, g - sign * terms.u[None, :], dom[None, :]) @ terms.weight
        if cfg.include_carrier:
            mean = 0.5 * (rabi_frequency_mode(terms.n1, cfg.trap.eta_z, cfg.drive.rabi_bare,
                                              cfg.linearized)
                          + rabi_frequency_mode(terms.n2, cfg.trap.eta_z, cfg.drive.rabi_bare,
                                                cfg.linearized))
            acc += 2.0 * (rabi_kernel(t, g, np.atleast_1d(mean)[None, :]) @ terms.weight)
        out[start:start + g.shape[0]] = acc
    return 0.5 * out


def _pair_operators():
    sz = collective_sz(2)
    x1 = single_sx(2, 0)
    x2 = single_sx(2, 1)
    singlet = -(_pair_dot(2, 0, 1) - 0.25 * np.eye(4))
    n_exc = np.array([0.0, 1.0, 1.0, 2.0])
    return sz, x1, x2, singlet, n_exc


def _exact_pair(cfg: ThermalLineshapeConfig, grid: np.ndarray) -> np.ndarray:
    terms = pair_terms(cfg, merge=False)
    eta, rb = cfg.trap.eta_z, cfg.drive.rabi_bare
    lin = cfg.linearized
    o1 = np.atleast_1d(rabi_frequency_mode(terms.n1, eta, rb, lin))
    o2 = np.atleast_1d(rabi_frequency_mode(terms.n2, eta, rb, lin))
    sz, x1, x2, singlet, n_exc = _pair_operators()
    start_state = 0 if cfg.drive.direction == Direction.GtoE else 3
    t = cfg.drive.duration
    static_all = (-o1[:, None, None] * x1 - o2[:, None, None] * x2
                  + terms.u[:, None, None] * singlet)
    out = np.zeros(grid.size)
    for i, delta in enumerate(grid):
        acc = 0.0
        for s in range(0, terms.weight.size, _PAIR_CHUNK):
            h = static_all[s:s + _PAIR_CHUNK] - delta * np.diag(sz)
            evals, evecs = np.linalg.eigh(h)
            amp = np.einsum("bij,bj->bi", evecs,
                            np.exp(-1j * evals * t) * evecs[:, start_state, :].conj())
            frac = (np.abs(amp) ** 2) @ n_exc / 2.0
            if cfg.drive.direction == Direction.EtoG:
                frac = 1.0 - frac
            acc += float(frac @ terms.weight[s:s + _PAIR_CHUNK])
        out[i] = acc
    return out


def thermal_lineshape_bruteforce(cfg: ThermalLineshapeConfig, grid) -> Spectrum:
    """Boltzmann average over axial pairs n1 > n2 of the per-pair lineshape."""
    grid = as_grid(grid)
    if cfg.fidelity == Fidelity.EXACT_PAIR:
        vals = _exact_pair(cfg, grid)
    else:
        vals = _sideband_formula(cfg, grid)
    return Spectrum(grid, vals)


# --------------------------------------------------------------------------
# closed form


def regime_checks(cfg: ThermalLineshapeConfig) -> list:
    """(flag bit, message) for every global precondition of the closed form that fails."""
    out = []
    alpha = cfg.alpha
    if not alpha < ALPHA_MAX:
        t_min = CONSTANTS.hbar * cfg.trap.omega_z / CONSTANTS.boltzmann_k
        out.append((FLAG_COLD_AXIAL,
                    f"k_B T_Z >> hbar omega_Z fails: T_Z = {cfg.thermal.temp_z * 1e6:.3g} uK "
                    f"against hbar omega_Z / k_B = {t_min * 1e6:.3g} uK "
                    f"(hbar omega_Z / k_B T_Z = {alpha:.3g} >= {ALPHA_MAX:g})"))
    if math.isfinite(alpha) and alpha > 0:
        rb, eta = cfg.drive.rabi_bare, cfg.trap.eta_z
        # <n1 - n2> over the pair distribution is 1 / (1 - exp(-alpha))
        mean_dom = rb * eta ** 2 / (math.sqrt(2.0) * (1.0 - math.exp(-alpha)))
        if cfg.drive.duration * mean_dom >= 1:
            out.append((FLAG_LONG_PULSE,
                        f"t <Delta Omega> = {cfg.drive.duration * mean_dom:.3g}: the pulse is "
                        "not short against the mean Rabi-frequency spread"))
    return out


def isb_closed_form(cfg: ThermalLineshapeConfig, grid) -> Spectrum:
    """Continuum-limit thermal interaction sideband.

    With xi = <U>_T / sqrt(pi) and x0 = (xi/delta)^2 the pair count is

        pi^2 s Omega^B eta^4 / (2 alpha^2 |xi|) * x0^(7/2) exp(-x0)

    on the resonant side (delta <U>_T > 0 for GtoE) and zero on the other.
    Points outside the approximation's regime are flagged, not rejected.
    """
    grid = as_grid(grid)
    drive = cfg.drive
    eta = cfg.trap.eta_z
    s = drive.pulse_area_factor
    rb = drive.rabi_bare
    mean_u = cfg.interaction.mean_u_thermal
    alpha = cfg.alpha
    flags = np.zeros(grid.size, dtype=np.int64)
    notes = []
    near = np.abs(grid) < CARRIER_CUT * rb
    flags[near] |= FLAG_NEAR_CARRIER
    if near.any():
        notes.append(f"{int(near.sum())} grid points with |delta| < {CARRIER_CUT:g} Omega^B "
                     "lie outside the closed-form regime")
    for bit, msg in regime_checks(cfg):
        flags |= bit
        notes.append(msg)
    out = np.zeros(grid.size)
    if mean_u == 0 or eta == 0 or not math.isfinite(alpha):
        return Spectrum(grid, out, flags=flags, warnings=notes)
    sign = 1.0 if drive.direction == Direction.GtoE else -1.0
    xi = mean_u / math.sqrt(math.pi)
    res = (sign * grid * mean_u > 0)
    x0 = (xi / grid[res]) ** 2
    pref = math.pi ** 2 * s * rb * eta ** 4 / (2.0 * alpha ** 2 * abs(xi))
    out[res] = 0.5 * pref * x0 ** 3.5 * np.exp(-x0)
    return Spectrum(grid, out, flags=flags, warnings=notes)


def closed_form_peak(mean_u: float) -> float:
    """Detuning of the closed-form maximum, <U>_T / sqrt(7 pi / 2)."""
    return mean_u / math.sqrt(3.5 * math.pi)


def sideband_kernel_integral(c: float, rtol: float = 1e-8) -> float:
    """Integral over the real line of sin^2(c sqrt(1+p^2)) / (1+p^2).

    With v = sqrt(1+p^2) the integral becomes pi/2 minus the Fourier integral
    of 1/(v sqrt(v^2-1)) on [1, inf).  The integrable endpoint singularity is
    removed on [1, 2] by v = cosh(w); the rest uses QAWF.
    """
    if c < 0 or not math.isfinite(c):
        raise DomainError("c must be a finite non-negative number")
    if c == 0:
        return 0.0
    k = 2.0 * c
    w_split = math.acosh(2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            head, _ = integrate.quad(lambda w: math.cos(k * math.cosh(w)) / math.cosh(w),
                                     0.0, w_split, epsabs=0, epsrel=rtol * 1e-2, limit=200)
            tail, _ = integrate.quad(lambda v: 1.0 / (v * math.sqrt(v * v - 1.0)), 2.0, np.inf,
                                     weight="cos", wvar=k, epsabs=rtol * 1e-3 * c, limlst=200)
        except integrate.IntegrationWarning as exc:
            raise RuntimeError(f"kernel quadrature did not converge for c={c}: {exc}") from exc
    return float(math.pi / 2 - (head + tail))
