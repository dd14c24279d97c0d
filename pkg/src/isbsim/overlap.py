"""Axial overlap integrals, their asymptotics and the thermal interaction factors.

The overlap of two axial harmonic-oscillator densities is

    I(n1, n2) = sqrt(2 pi) * integral psi_n1(z)^2 psi_n2(z)^2 dz

with normalised Hermite functions ``psi_n``.  I(0, 0) = 1 and I(n, 0) equals
C(2n, n) / 4**n.

Hermite functions are generated with the normalised three-term recurrence and
a running log-scale, so they stay finite for mode numbers in the thousands.
Integrals use Gauss-Hermite quadrature on nodes scaled for the weight
exp(-2 z^2); the integrand is polynomial times that weight, so the rule is
exact once enough nodes are used.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import ellipk, roots_hermite

from .core import (CONSTANTS, DomainError, PhysicalConstants, ThermalState, TrapGeometry,
                   TruncationError, boltzmann_alpha)

# full exact tables are built up to this mode number; beyond it only the
# near-diagonal band |n1 - n2| < ASYMPTOTIC_SWITCH is integrated exactly
EXACT_TABLE_CAP = 256
ASYMPTOTIC_SWITCH = 64
_BAND_BLOCK = 256
_RESCALE = 1e150


@dataclass(frozen=True)
class TruncationPolicy:
    tail_weight_tol: float = 1e-6
    max_mode: int = 4000

    def __post_init__(self):
        if not 0 < self.tail_weight_tol < 1:
            raise DomainError("tail_weight_tol must lie in (0, 1)")
        if self.max_mode < 1:
            raise DomainError("max_mode must be >= 1")


DEFAULT_TRUNCATION = TruncationPolicy()


class OverlapKind(str, enum.Enum):
    """How I(n1, n2) is evaluated inside mode sums."""

    EXACT = "exact"          # quadrature; elliptic asymptotic only far off-diagonal at high n
    ELLIPTIC = "elliptic"    # elliptic-integral asymptotic for every n1 != n2
    K0 = "k0"                # 1/sqrt(pi |n1 - n2|) for every n1 != n2
    K0_FAR = "k0_far"        # exact below ASYMPTOTIC_SWITCH, 1/sqrt(pi |n1 - n2|) above


class ThermalModel(str, enum.Enum):
    """Evaluation of the thermal factors entering <U>_T.

    ``SUM`` performs the Boltzmann double sums with exact overlaps.
    ``ASYMPTOTIC`` uses the limiting forms theta -> min(1, sqrt(alpha)) and
    theta_tilde -> min(1/2, sqrt(alpha)); this is the form under which the
    closed-form sideband expression is self-consistent.
    """

    SUM = "sum"
    ASYMPTOTIC = "asymptotic"


# --------------------------------------------------------------------------
# Hermite functions and quadrature


def hermite_functions(n_max: int, z) -> np.ndarray:
    """Normalised Hermite functions psi_0..psi_{n_max} evaluated at ``z``.

    Returns an array of shape ``(n_max + 1, len(z))``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty((n_max + 1, z.size))
    p_prev = np.zeros_like(z)
    p = np.full_like(z, math.pi ** -0.25)
    log_scale = -0.5 * z * z
    out[0] = p * np.exp(log_scale)
    log_big = math.log(_RESCALE)
    for n in range(n_max):
        p_next = math.sqrt(2.0 / (n + 1)) * z * p - math.sqrt(n / (n + 1.0)) * p_prev
        p_prev, p = p, p_next
        big = np.abs(p) > _RESCALE
        if big.any():
            p[big] /= _RESCALE
            p_prev[big] /= _RESCALE
            log_scale[big] += log_big
        with np.errstate(divide="ignore"):
            out[n + 1] = np.sign(p) * np.exp(np.log(np.abs(p)) + log_scale)
    return out


@lru_cache(maxsize=16)
def _gauss_hermite(n_nodes: int):
    """Nodes and scaled weights w_k exp(y_k^2) for weight exp(-y^2)."""
    y, _ = roots_hermite(n_nodes)
    psi_last = hermite_functions(n_nodes - 1, y)[-1]
    w_scaled = 1.0 / (n_nodes * psi_last ** 2)
    y.setflags(write=False)
    w_scaled.setflags(write=False)
    return y, w_scaled


def _density_matrix(n_max: int, n_nodes: int):
    """Rows psi_n(z_k)^2 * sqrt(sqrt(2 pi) W_k) on the exp(-2 z^2) rule.

    Row products then integrate directly to I(n1, n2).
    """
    y, w_scaled = _gauss_hermite(n_nodes)
    z = y / math.sqrt(2.0)
    weights = math.sqrt(2.0 * math.pi) * w_scaled / math.sqrt(2.0)
    dens = hermite_functions(n_max, z) ** 2
    return dens * np.sqrt(weights)


def _pair_nodes(n1: int, n2: int) -> int:
    n = 2 * (n1 + n2) + 1
    return n + (n % 2)


def overlap_integral(n1: int, n2: int, policy: TruncationPolicy = DEFAULT_TRUNCATION) -> float:
    """Exact I(n1, n2) by Gauss-Hermite quadrature."""
    n1, n2 = int(n1), int(n2)
    if n1 < 0 or n2 < 0:
        raise DomainError("mode indices must be non-negative")
    if max(n1, n2) > policy.max_mode:
        raise TruncationError(
            f"mode {max(n1, n2)} exceeds max_mode={policy.max_mode}", n_max=policy.max_mode)
    rows = _density_matrix(max(n1, n2), _pair_nodes(n1, n2))
    return float(rows[n1] @ rows[n2])


@lru_cache(maxsize=8)
def overlap_table(n_max: int) -> np.ndarray:
    """Full exact matrix I[n1, n2] for 0 <= n1, n2 <= n_max (read-only)."""
    rows = _density_matrix(n_max, 2 * n_max + 2)
    table = rows @ rows.T
    table = 0.5 * (table + table.T)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=8)
def overlap_band(n_max: int, width: int = ASYMPTOTIC_SWITCH) -> np.ndarray:
    """Exact near-diagonal overlaps: ``band[d, n] = I(n + d, n)`` for d < width."""
    rows = _density_matrix(n_max, 2 * n_max + 2)
    n = n_max + 1
    band = np.zeros((width, n))
    for start in range(0, n, _BAND_BLOCK):
        stop = min(start + _BAND_BLOCK, n)
        hi = min(stop + width - 1, n)
        block = rows[start:stop] @ rows[start:hi].T
        for d in range(width):
            idx = np.arange(start, stop)
            ok = idx + d < hi
            band[d, idx[ok]] = block[idx[ok] - start, idx[ok] + d - start]
    band.setflags(write=False)
    return band


def _round_up(n: int, step: int = 256) -> int:
    return max(step, int(math.ceil((n + 1) / step)) * step)


def overlap_asymptotic(n1, n2, use_elliptic: bool = True):
    """Large-separation form of I(n1, n2).

    With ``use_elliptic`` the complete elliptic integral K(m),
    m = (1 - (n1 + n2)/|n1 - n2|)/2, multiplies 2/(pi sqrt(pi |n1 - n2|));
    otherwise K is replaced by K(0) = pi/2, leaving 1/sqrt(pi |n1 - n2|).
    Works elementwise on arrays.  m <= 0 for every admissible pair.
    """
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    d = np.abs(n1 - n2)
    if np.any(d == 0):
        raise DomainError("asymptotic overlap is singular for n1 == n2")
    if np.any(n1 < 0) or np.any(n2 < 0):
        raise DomainError("mode indices must be non-negative")
    base = 1.0 / np.sqrt(math.pi * d)
    if not use_elliptic:
        return base if base.ndim else float(base)
    m = 0.5 * (1.0 - (n1 + n2) / d)
    if np.any(m >= 1) or np.any(~np.isfinite(m)):
        raise DomainError("elliptic parameter outside (-inf, 1)")
    val = base * (2.0 / math.pi) * ellipk(m)
    return val if val.ndim else float(val)


def pair_overlaps(n1, n2, kind: OverlapKind = OverlapKind.EXACT) -> np.ndarray:
    """Vectorised I(n1, n2) for integer arrays, evaluated per ``kind``."""
    kind = OverlapKind(kind)
    n1 = np.asarray(n1, dtype=np.int64)
    n2 = np.asarray(n2, dtype=np.int64)
    n1, n2 = np.broadcast_arrays(n1, n2)
    hi = np.maximum(n1, n2)
    lo = np.minimum(n1, n2)
    d = hi - lo
    out = np.empty(hi.shape, dtype=float)
    if out.size == 0:
        return out
    top = int(hi.max())

    far_thresh = {OverlapKind.EXACT: ASYMPTOTIC_SWITCH, OverlapKind.K0_FAR: ASYMPTOTIC_SWITCH,
                  OverlapKind.ELLIPTIC: 1, OverlapKind.K0: 1}[kind]
    use_table = kind == OverlapKind.EXACT and top <= EXACT_TABLE_CAP
    if use_table:
        table = overlap_table(_round_up(top, 64))
        out[...] = table[hi, lo]
        return out

    far = d >= far_thresh
    near = ~far
    if near.any():
        if top <= EXACT_TABLE_CAP:
            table = overlap_table(_round_up(top, 64))
            out[near] = table[hi[near], lo[near]]
        else:
            band = overlap_band(_round_up(top))
            out[near] = band[d[near], lo[near]]
    if far.any():
        elliptic = kind in (OverlapKind.EXACT, OverlapKind.ELLIPTIC)
        out[far] = overlap_asymptotic(hi[far], lo[far], use_elliptic=elliptic)
    return out


# --------------------------------------------------------------------------
# Thermal factors


def mode_cutoff(alpha: float, policy: TruncationPolicy = DEFAULT_TRUNCATION) -> int:
    """Smallest n_max with single-axis Boltzmann tail exp(-alpha (n_max+1)) below tolerance."""
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    n_max = max(1, int(math.ceil(math.log(1.0 / policy.tail_weight_tol) / alpha)) - 1)
    if n_max > policy.max_mode:
        tail = math.exp(-alpha * (policy.max_mode + 1))
        raise TruncationError(
            f"alpha={alpha:g} needs n_max={n_max} > max_mode={policy.max_mode} "
            f"(tail weight at cap {tail:.3g})", tail_weight=tail, n_max=policy.max_mode)
    return n_max


def _diagonal_sums(alpha: float, n_max: int, kind: OverlapKind):
    """Per-offset Boltzmann sums over pairs n1 = n2 + d <= n_max.

    Returns (num[d], den[d]) with num = sum I w and den = sum w, w = exp(-alpha (n1+n2)).
    """
    num = np.zeros(n_max + 1)
    den = np.zeros(n_max + 1)
    n2_all = np.arange(n_max + 1)
    for d in range(n_max + 1):
        n2 = n2_all[: n_max + 1 - d]
        w = np.exp(-alpha * (2 * n2 + d))
        den[d] = w.sum()
        if kind == OverlapKind.K0 and d > 0 or kind == OverlapKind.K0_FAR and d >= ASYMPTOTIC_SWITCH:
            num[d] = den[d] / math.sqrt(math.pi * d)
        else:
            num[d] = (pair_overlaps(n2 + d, n2, kind) * w).sum()
    return num, den


def theta(alpha: float, policy: TruncationPolicy = DEFAULT_TRUNCATION,
          kind: OverlapKind = OverlapKind.EXACT) -> float:
    """Boltzmann average of I over all mode pairs (n1, n2).

    ``alpha = hbar omega / (k_B T)``; ``inf`` returns the ground value 1.
    """
    if alpha == math.inf:
        return 1.0
    num, den = _diagonal_sums(alpha, mode_cutoff(alpha, policy), OverlapKind(kind))
    return float((num[0] + 2.0 * num[1:].sum()) / (den[0] + 2.0 * den[1:].sum()))


def theta_tilde(alpha: float, policy: TruncationPolicy = DEFAULT_TRUNCATION,
                kind: OverlapKind = OverlapKind.EXACT) -> float:
    """Boltzmann average of I over pairs with n1 > n2 (Pauli-restricted); 1/2 at T = 0."""
    if alpha == math.inf:
        return 0.5
    num, den = _diagonal_sums(alpha, mode_cutoff(alpha, policy), OverlapKind(kind))
    return float(num[1:].sum() / den[1:].sum())


def theta_asymptotic(alpha: float) -> float:
    return 1.0 if alpha >= 1.0 else math.sqrt(alpha)


def theta_tilde_asymptotic(alpha: float) -> float:
    return 0.5 if alpha >= 0.25 else math.sqrt(alpha)


def thermal_factors(trap: TrapGeometry, thermal: ThermalState,
                    model: ThermalModel = ThermalModel.ASYMPTOTIC,
                    policy: TruncationPolicy = DEFAULT_TRUNCATION,
                    constants: PhysicalConstants = CONSTANTS):
    """(theta_X, theta_Y, theta_tilde_Z) for a site."""
    ax = boltzmann_alpha(trap.omega_x, thermal.temp_x, constants)
    ay = boltzmann_alpha(trap.omega_y, thermal.temp_y, constants)
    az = boltzmann_alpha(trap.omega_z, thermal.temp_z, constants)
    if ThermalModel(model) == ThermalModel.ASYMPTOTIC:
        return theta_asymptotic(ax), theta_asymptotic(ay), theta_tilde_asymptotic(az)
    return theta(ax, policy), theta(ay, policy), theta_tilde(az, policy)


def transverse_factor(trap: TrapGeometry, thermal: ThermalState,
                      model: ThermalModel = ThermalModel.ASYMPTOTIC,
                      policy: TruncationPolicy = DEFAULT_TRUNCATION,
                      constants: PhysicalConstants = CONSTANTS) -> float:
    """theta_X * theta_Y: renormalisation of u by transverse thermal occupation."""
    ax = boltzmann_alpha(trap.omega_x, thermal.temp_x, constants)
    ay = boltzmann_alpha(trap.omega_y, thermal.temp_y, constants)
    if ThermalModel(model) == ThermalModel.ASYMPTOTIC:
        return theta_asymptotic(ax) * theta_asymptotic(ay)
    return theta(ax, policy) * theta(ay, policy)


# --------------------------------------------------------------------------
# Interaction strengths


def u_param(a: float, trap: TrapGeometry, mass: float = CONSTANTS.mass_sr87,
            constants: PhysicalConstants = CONSTANTS) -> float:
    """Bare interaction scale ``4 a sqrt(m wx wy wz / h)`` in rad/s (sign of ``a``)."""
    return 4.0 * a * math.sqrt(mass * trap.omega_x * trap.omega_y * trap.omega_z
                               / constants.planck_h)


def mean_interaction(a: float, trap: TrapGeometry, thermal: ThermalState,
                     mass: float = CONSTANTS.mass_sr87,
                     model: ThermalModel = ThermalModel.ASYMPTOTIC,
                     policy: TruncationPolicy = DEFAULT_TRUNCATION,
                     constants: PhysicalConstants = CONSTANTS) -> float:
    """Thermally averaged pair interaction <U>_T = u theta_X theta_Y theta_tilde_Z."""
    tx, ty, tz = thermal_factors(trap, thermal, model, policy, constants)
    return u_param(a, trap, mass, constants) * tx * ty * tz


def gamma_ratio(n_atoms: int, mean_u: float, mean_rabi: float) -> float:
    """Interaction energy per particle over mean Rabi frequency, (N-1)|<U>|/(2 <Omega>)."""
    if n_atoms < 2:
        raise DomainError("gamma needs at least two atoms per site")
    if not mean_rabi > 0:
        raise DomainError("mean_rabi must be positive")
    return (n_atoms - 1) * abs(mean_u) / (2.0 * mean_rabi)


@dataclass(frozen=True)
class InteractionParams:
    a_eg_minus: float
    u: float
    mean_u_thermal: float
    model: ThermalModel = ThermalModel.ASYMPTOTIC

    @classmethod
    def from_scattering_length(cls, a: float, trap: TrapGeometry, thermal: ThermalState,
                               model: ThermalModel = ThermalModel.ASYMPTOTIC,
                               policy: TruncationPolicy = DEFAULT_TRUNCATION,
                               mass: float = CONSTANTS.mass_sr87) -> "InteractionParams":
        u = u_param(a, trap, mass)
        mean = mean_interaction(a, trap, thermal, mass, model, policy)
        return cls(a, u, mean, ThermalModel(model))


def pair_interaction_matrix(modes, u_eff: float, kind: OverlapKind = OverlapKind.EXACT,
                            policy: Optional[TruncationPolicy] = None) -> np.ndarray:
    """Symmetric U_{jj'} = u_eff * I(n_j, n_j') with zero diagonal."""
    modes = np.asarray(list(modes), dtype=np.int64)
    if policy is not None and modes.size and modes.max() > policy.max_mode:
        raise TruncationError("mode exceeds max_mode", n_max=policy.max_mode)
    n = modes.size
    jj, kk = np.meshgrid(modes, modes, indexing="ij")
    off = ~np.eye(n, dtype=bool)
    mat = np.zeros((n, n))
    if n > 1:
        mat[off] = u_eff * pair_overlaps(jj[off], kk[off], kind)
    return mat
