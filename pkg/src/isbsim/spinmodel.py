"""Pseudo-spin model of N fermions on distinct axial modes of one lattice site.

The rotating-frame Hamiltonian (in units of hbar) is

    H = -delta S^z - sum_j Omega_j S^x_j - sum_{j != j'} (U_jj'/2) (S_j . S_j' - 1/4)

on the 2^N product basis.  Basis index bit ``j`` (most significant first) is 1
when atom j is in ``e``.  The singlet of a pair sits at +U_jj' and symmetric
(S = N/2) states feel no interaction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import minimize_scalar
from scipy.signal import find_peaks
from scipy.special import eval_laguerre

from .core import DomainError, Direction, DriveParams, ModeConfiguration, Spectrum, as_grid
from .overlap import OverlapKind, pair_interaction_matrix

MAX_ATOMS = 12


def rabi_frequency_mode(n, eta: float, rabi_bare: float, linearized: bool = False):
    """Carrier Rabi frequency of axial mode ``n``.

    Exact: ``rabi_bare * exp(-eta^2/2) * L_n(eta^2)``.  Linearized:
    ``rabi_bare * (1 - eta^2 (n + 1/2))``, the first order of the exact form.
    """
    n_arr = np.asarray(n)
    if np.any(n_arr < 0) or eta < 0:
        raise DomainError("need n >= 0 and eta >= 0")
    e2 = eta * eta
    if linearized:
        out = rabi_bare * (1.0 - e2 * (n_arr + 0.5))
    else:
        out = rabi_bare * math.exp(-0.5 * e2) * eval_laguerre(n_arr, e2)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class SpinSystem:
    modes: ModeConfiguration
    rabi_per_mode: np.ndarray
    u_matrix: np.ndarray
    detuning: float = 0.0

    def __post_init__(self):
        if not isinstance(self.modes, ModeConfiguration):
            self.modes = ModeConfiguration(tuple(self.modes))
        n = self.modes.n_atoms
        self.rabi_per_mode = np.asarray(self.rabi_per_mode, dtype=float).reshape(-1)
        self.u_matrix = np.asarray(self.u_matrix, dtype=float)
        if self.rabi_per_mode.size != n or self.u_matrix.shape != (n, n):
            raise DomainError("rabi_per_mode and u_matrix must match the number of modes")
        if not np.allclose(self.u_matrix, self.u_matrix.T, rtol=0, atol=1e-12 * (1 + np.abs(self.u_matrix).max())):
            raise DomainError("u_matrix must be symmetric")
        if np.any(np.diag(self.u_matrix) != 0):
            raise DomainError("u_matrix must have a zero diagonal")

    @property
    def n_atoms(self) -> int:
        return self.modes.n_atoms

    def with_detuning(self, detuning: float) -> "SpinSystem":
        return SpinSystem(self.modes, self.rabi_per_mode, self.u_matrix, detuning)

    @classmethod
    def from_modes(cls, modes, eta: float, rabi_bare: float, u_eff: float,
                   linearized: bool = False, kind: OverlapKind = OverlapKind.EXACT,
                   detuning: float = 0.0) -> "SpinSystem":
        """Build Omega_j from the Lamb-Dicke model and U_jj' = u_eff I(n_j, n_j')."""
        cfg = modes if isinstance(modes, ModeConfiguration) else ModeConfiguration(tuple(modes))
        rabi = rabi_frequency_mode(np.array(cfg.modes), eta, rabi_bare, linearized)
        return cls(cfg, np.atleast_1d(rabi), pair_interaction_matrix(cfg.modes, u_eff, kind), detuning)


@dataclass
class CollectiveSpectrum:
    energies: np.ndarray
    couplings: np.ndarray
    mean_rabi: float
    degenerate: bool = False
    blocks: list = field(default_factory=list)


@dataclass
class QuantumState:
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        dim = self.amplitudes.size
        if dim < 2 or dim & (dim - 1):
            raise DomainError("state dimension must be a power of two")
        if abs(np.linalg.norm(self.amplitudes) - 1) > 1e-9:
            raise DomainError("state must have unit norm")

    @property
    def n_atoms(self) -> int:
        return int(self.amplitudes.size).bit_length() - 1

    @classmethod
    def all_ground(cls, n_atoms: int) -> "QuantumState":
        psi = np.zeros(2 ** n_atoms, dtype=complex)
        psi[0] = 1
        return cls(psi)

    @classmethod
    def all_excited(cls, n_atoms: int) -> "QuantumState":
        psi = np.zeros(2 ** n_atoms, dtype=complex)
        psi[-1] = 1
        return cls(psi)


# --------------------------------------------------------------------------
# operators


@lru_cache(maxsize=None)
def _excitation_bits(n_atoms: int) -> np.ndarray:
    """bits[b, j] = 1 if atom j is excited in basis state b."""
    idx = np.arange(2 ** n_atoms)
    shifts = n_atoms - 1 - np.arange(n_atoms)
    bits = (idx[:, None] >> shifts[None, :]) & 1
    bits.setflags(write=False)
    return bits


def collective_sz(n_atoms: int) -> np.ndarray:
    """Diagonal of S^z on the product basis."""
    return _excitation_bits(n_atoms).sum(axis=1) - 0.5 * n_atoms


def single_sx(n_atoms: int, j: int) -> np.ndarray:
    dim = 2 ** n_atoms
    flip = 1 << (n_atoms - 1 - j)
    op = np.zeros((dim, dim))
    idx = np.arange(dim)
    op[idx ^ flip, idx] = 0.5
    return op


def total_spin_squared(n_atoms: int) -> np.ndarray:
    """S^2 = sum_{j,k} S_j . S_k on the product basis."""
    dim = 2 ** n_atoms
    bits = _excitation_bits(n_atoms)
    s2 = np.zeros((dim, dim))
    for j in range(n_atoms):
        for k in range(n_atoms):
            s2 += _pair_dot(n_atoms, j, k, bits)
    return s2


def _pair_dot(n_atoms: int, j: int, k: int, bits=None) -> np.ndarray:
    """Matrix of S_j . S_k (3/4 on the diagonal when j == k)."""
    dim = 2 ** n_atoms
    if j == k:
        return 0.75 * np.eye(dim)
    if bits is None:
        bits = _excitation_bits(n_atoms)
    idx = np.arange(dim)
    zz = (bits[:, j] - 0.5) * (bits[:, k] - 0.5)
    op = np.diag(zz)
    differ = bits[:, j] != bits[:, k]
    flip = (1 << (n_atoms - 1 - j)) | (1 << (n_atoms - 1 - k))
    op[idx[differ] ^ flip, idx[differ]] += 0.5
    return op


def _static_parts(sys: SpinSystem):
    n = sys.n_atoms
    dim = 2 ** n
    bits = _excitation_bits(n)
    drive = np.zeros((dim, dim))
    for j in range(n):
        drive -= sys.rabi_per_mode[j] * single_sx(n, j)
    inter = np.zeros((dim, dim))
    for j in range(n):
        for k in range(j + 1, n):
            if sys.u_matrix[j, k] != 0:
                # ordered pairs (j,k) and (k,j) each carry U/2
                inter -= sys.u_matrix[j, k] * (_pair_dot(n, j, k, bits) - 0.25 * np.eye(dim))
    return drive, inter


def build_hamiltonian(sys: SpinSystem) -> np.ndarray:
    """Dense real-symmetric H/hbar (rad/s) on the 2^N product basis."""
    if sys.n_atoms > MAX_ATOMS:
        raise MemoryError(f"N={sys.n_atoms} exceeds the dense-evolution cap of {MAX_ATOMS} atoms")
    drive, inter = _static_parts(sys)
    return np.diag(-sys.detuning * collective_sz(sys.n_atoms)) + drive + inter


def interaction_hamiltonian(sys: SpinSystem) -> np.ndarray:
    return _static_parts(sys)[1]


def evolve(hamiltonian: np.ndarray, initial: QuantumState, t: float) -> QuantumState:
    """exp(-i H t) |initial> via eigendecomposition of the Hermitian H."""
    h = np.asarray(hamiltonian)
    if not np.allclose(h, h.conj().T, rtol=0, atol=1e-9 * (1 + np.abs(h).max())):
        raise RuntimeError("Hamiltonian is not Hermitian")
    if t == 0:
        return QuantumState(initial.amplitudes.copy())
    evals, evecs = np.linalg.eigh(h)
    coeff = evecs.conj().T @ initial.amplitudes
    psi = evecs @ (np.exp(-1j * evals * t) * coeff)
    psi /= np.linalg.norm(psi)
    return QuantumState(psi)


def excitation_fraction(state: QuantumState) -> float:
    """<N_e>/N."""
    n = state.n_atoms
    probs = np.abs(state.amplitudes) ** 2
    n_exc = _excitation_bits(n).sum(axis=1)
    return float(np.clip(probs @ n_exc / n, 0.0, 1.0))


def lineshape_exact(sys: SpinSystem, drive: DriveParams, grid) -> Spectrum:
    """Excitation (GtoE) or de-excitation (EtoG) fraction after a square pulse."""
    grid = as_grid(grid)
    n = sys.n_atoms
    if n > MAX_ATOMS:
        raise MemoryError(f"N={n} exceeds the dense-evolution cap of {MAX_ATOMS} atoms")
    drive_op, inter = _static_parts(sys)
    static = drive_op + inter
    sz = collective_sz(n)
    n_exc = _excitation_bits(n).sum(axis=1)
    start = 0 if drive.direction == Direction.GtoE else 2 ** n - 1
    t = drive.duration
    out = np.empty(grid.size)
    for i, delta in enumerate(grid):
        h = static - np.diag(delta * sz)
        evals, evecs = np.linalg.eigh(h)
        amp = evecs @ (np.exp(-1j * evals * t) * evecs[start].conj())
        frac = (np.abs(amp) ** 2) @ n_exc / n
        out[i] = frac if drive.direction == Direction.GtoE else 1.0 - frac
    return Spectrum(grid, np.clip(out, 0.0, 1.0))


# --------------------------------------------------------------------------
# collective S = N/2 - 1 spectrum


def _one_flip_sector(sys: SpinSystem):
    """Interaction in the one-flip-from-|e...e> sector: (L/2) with L the graph Laplacian of U."""
    u = sys.u_matrix
    return 0.5 * (np.diag(u.sum(axis=1)) - u)


def collective_spectrum(sys: SpinSystem, degeneracy_tol: float = 1e-9) -> CollectiveSpectrum:
    """Energies U^{q,N} and couplings Delta Omega^{q,N} of the S = N/2 - 1 sector.

    Couplings are ``sum_j Omega_j c_j^q`` with c^q the sector eigenvectors; inside a
    degenerate block the coupling vector is rotated onto a single member so that
    each block carries its basis-independent summed squared coupling.
    """
    n = sys.n_atoms
    if n < 2:
        raise DomainError("collective spectrum needs N >= 2")
    h1 = _one_flip_sector(sys)
    sym = np.full(n, 1.0 / math.sqrt(n))
    # orthonormal basis of the complement of the symmetric state
    q, _ = np.linalg.qr(np.column_stack([sym, np.eye(n)[:, : n - 1]]))
    basis = q[:, 1:n]
    basis *= np.sign(basis.sum(axis=0) + 1e-300)  # deterministic sign convention
    h_red = basis.T @ h1 @ basis
    h_red = 0.5 * (h_red + h_red.T)
    evals, evecs = np.linalg.eigh(h_red)
    vecs = basis @ evecs
    couplings = sys.rabi_per_mode @ vecs
    scale = max(1.0, float(np.abs(evals).max()))
    blocks = []
    i = 0
    degenerate = False
    while i < evals.size:
        j = i + 1
        while j < evals.size and abs(evals[j] - evals[i]) <= degeneracy_tol * scale:
            j += 1
        if j - i > 1:
            degenerate = True
            total = math.sqrt(float(np.sum(couplings[i:j] ** 2)))
            couplings[i:j] = 0.0
            couplings[i] = total
        blocks.append((i, j))
        i = j
    order = np.lexsort((-np.abs(couplings), evals))
    return CollectiveSpectrum(evals[order], couplings[order], float(np.mean(sys.rabi_per_mode)),
                              degenerate, blocks)


def rabi_kernel(t, delta, y):
    """Two-level excitation probability y^2/(y^2+delta^2) sin^2(t sqrt(y^2+delta^2)/2)."""
    delta = np.asarray(delta, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = y * y + delta * delta
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(r2 > 0, y * y / np.where(r2 > 0, r2, 1.0) * np.sin(0.5 * t * np.sqrt(r2)) ** 2, 0.0)
    return out


def lineshape_sidebands(spec: CollectiveSpectrum, n_atoms: int, drive: DriveParams, grid,
                        include_carrier: bool = True) -> Spectrum:
    """Carrier plus N-1 interaction sidebands, as an excitation fraction."""
    grid = as_grid(grid)
    t = drive.duration
    sign = 1.0 if drive.direction == Direction.GtoE else -1.0
    total = n_atoms * rabi_kernel(t, grid, spec.mean_rabi) if include_carrier else np.zeros(grid.size)
    for energy, coupling in zip(spec.energies, spec.couplings):
        if coupling != 0:
            total = total + rabi_kernel(t, grid - sign * energy, coupling)
    return Spectrum(grid, total / n_atoms)


def ground_state_system(n_atoms: int, eta: float = 0.4, rabi_bare: float = 2 * math.pi * 5.0,
                u: float = 2 * math.pi * 2800.0, linearized: bool = False) -> SpinSystem:
    """T = 0 site with the lowest N axial modes occupied."""
    return SpinSystem.from_modes(ModeConfiguration.lowest(n_atoms), eta, rabi_bare, u, linearized)


def single_atom_lineshape(drive: DriveParams, grid, rabi: Optional[float] = None) -> np.ndarray:
    return rabi_kernel(drive.duration, as_grid(grid), drive.rabi_bare if rabi is None else rabi)


def sideband_peaks(detuning: np.ndarray, values: np.ndarray, carrier_exclusion: float,
                   duration: float, rel_prominence: float = 0.05):
    """Detunings and heights of resolved peaks outside ``|delta| < carrier_exclusion``.

    The sinc^2 side lobes flanking every resonance are periodic in detuning with
    period 2 pi / t, so the lineshape is first averaged over one such period.  A
    maximum of the averaged curve counts when its prominence is at least
    ``rel_prominence`` of its height; the reported height is the raw value there.
    """
    detuning = np.asarray(detuning, dtype=float)
    values = np.asarray(values, dtype=float)
    if detuning.size < 3:
        return np.array([]), np.array([])
    step = float(np.median(np.diff(detuning)))
    width = max(1, int(round(2 * math.pi / duration / step)))
    smooth = uniform_filter1d(values, width, mode="nearest")
    idx, props = find_peaks(smooth, prominence=0)
    keep = [i for i, p in zip(idx, props["prominences"])
            if abs(detuning[i]) >= carrier_exclusion and smooth[i] > 0
            and p >= rel_prominence * smooth[i]]
    # snap to the raw maximum inside the averaging window
    half = width // 2 + 1
    out = []
    for i in keep:
        lo, hi = max(0, i - half), min(values.size, i + half + 1)
        out.append(lo + int(np.argmax(values[lo:hi])))
    return detuning[out], values[out]


def refine_peak(fn, guess: float, half_width: float):
    """Locate the maximum of a scalar function near ``guess`` (bounded scalar search)."""
    res = minimize_scalar(lambda x: -fn(x), bounds=(guess - half_width, guess + half_width),
                          method="bounded", options={"xatol": 1e-10 * max(1.0, abs(guess))})
    return float(res.x), float(-res.fun)


def sorted_modes(modes: Sequence[int]) -> tuple:
    return ModeConfiguration(tuple(modes)).modes
