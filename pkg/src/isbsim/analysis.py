"""Data reduction and fitting of clock-transition scans.

Scan data live in Hz (the units they are recorded in); detunings are
converted to rad/s only when a physics model is evaluated.  The pipeline is

    scans -> (Lorentzian centring) -> concatenate_and_bin -> reflect_subtract
          -> fit_scattering_length

Bins are aligned to delta = 0 (bin k spans [(k - 1/2) w, (k + 1/2) w)), so
every negative bin has an exact mirror partner.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .core import CONSTANTS, DomainError, to_angular
from .ensemble import Engine, LatticeDistribution, ensemble_average
from .overlap import InteractionParams
from .spinmodel import rabi_kernel
from .thermal import (CARRIER_CUT, ThermalLineshapeConfig, isb_closed_form,
                      thermal_lineshape_bruteforce)

A_BOUND_A0 = 1e4


# --------------------------------------------------------------------------
# data types


class ScanDirection(str, enum.Enum):
    UP = "up"
    DOWN = "down"


@dataclass
class ScanRecord:
    detuning_hz: np.ndarray
    excitation: np.ndarray
    direction: ScanDirection = ScanDirection.UP
    scan_id: str = ""

    def __post_init__(self):
        self.detuning_hz = np.asarray(self.detuning_hz, dtype=float)
        self.excitation = np.asarray(self.excitation, dtype=float)
        self.direction = ScanDirection(self.direction)
        if self.detuning_hz.shape != self.excitation.shape or self.detuning_hz.ndim != 1:
            raise DomainError("scan detunings and excitations must be equal-length 1-D arrays")
        step = np.diff(self.detuning_hz)
        ok = np.all(step > 0) if self.direction == ScanDirection.UP else np.all(step < 0)
        if not ok:
            raise DomainError(f"scan {self.scan_id!r} is not monotone {self.direction.value}")

    def __len__(self):
        return self.detuning_hz.size

    def shifted(self, offset_hz: float) -> "ScanRecord":
        return ScanRecord(self.detuning_hz - offset_hz, self.excitation, self.direction,
                          self.scan_id)


@dataclass
class BinnedSpectrum:
    center_hz: np.ndarray
    mean: np.ndarray
    sem: np.ndarray
    count: np.ndarray
    bin_width: float
    reflected: bool = False

    def __post_init__(self):
        self.center_hz = np.asarray(self.center_hz, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.sem = np.asarray(self.sem, dtype=float)
        self.count = np.asarray(self.count, dtype=np.int64)
        n = self.center_hz.size
        if not (self.mean.size == self.sem.size == self.count.size == n):
            raise DomainError("bin arrays must have equal length")
        if n > 1 and np.any(np.diff(self.center_hz) <= 0):
            raise DomainError("bin centres must be strictly increasing")
        if np.any(self.sem < 0) or np.any(self.count < 1):
            raise DomainError("sem must be >= 0 and count >= 1")

    def __len__(self):
        return self.center_hz.size

    @property
    def degenerate(self) -> np.ndarray:
        """Bins whose sem is undefined (a single point) and reported as 0."""
        return self.count < 2

    def select(self, mask) -> "BinnedSpectrum":
        mask = np.asarray(mask, dtype=bool)
        return BinnedSpectrum(self.center_hz[mask], self.mean[mask], self.sem[mask],
                              self.count[mask], self.bin_width, self.reflected)


@dataclass
class FitResult:
    parameters: Dict[str, tuple]
    residual_norm: float
    converged: bool
    n_evaluations: int
    message: str = ""
    flags: list = field(default_factory=list)
    cost_history: list = field(default_factory=list)

    def value(self, name: str) -> float:
        return self.parameters[name][0]

    def error(self, name: str) -> float:
        return self.parameters[name][1]

    def to_dict(self) -> dict:
        return {
            "parameters": {k: {"value": _jsonable(v), "stderr": _jsonable(e)}
                           for k, (v, e) in self.parameters.items()},
            "residual_norm": _jsonable(self.residual_norm),
            "converged": bool(self.converged),
            "n_evaluations": int(self.n_evaluations),
            "message": self.message,
            "flags": list(self.flags),
        }


def _jsonable(x: float):
    x = float(x)
    return x if math.isfinite(x) else str(x)


# --------------------------------------------------------------------------
# binning


def concatenate_and_bin(scans: Sequence[ScanRecord], bin_width: float) -> BinnedSpectrum:
    """Pool all scan points into bins of ``bin_width`` Hz centred on multiples of it."""
    if not bin_width > 0:
        raise DomainError("bin_width must be positive")
    if len(scans) == 0:
        raise DomainError("need at least one scan")
    x = np.concatenate([s.detuning_hz for s in scans])
    y = np.concatenate([s.excitation for s in scans])
    if x.size == 0:
        raise DomainError("all bins are empty")
    # order-independent pooling: sort by (bin, detuning, value)
    k = np.floor(x / bin_width + 0.5).astype(np.int64)
    order = np.lexsort((y, x, k))
    k, y = k[order], y[order]
    keys, start, count = np.unique(k, return_index=True, return_counts=True)
    sums = np.add.reduceat(y, start)
    mean = sums / count
    dev2 = np.add.reduceat((y - np.repeat(mean, count)) ** 2, start)
    with np.errstate(invalid="ignore", divide="ignore"):
        sd = np.where(count > 1, np.sqrt(dev2 / np.maximum(count - 1, 1)), 0.0)
    sem = sd / np.sqrt(count)
    return BinnedSpectrum(keys * bin_width, mean, sem, count, float(bin_width))


def reflect(binned: BinnedSpectrum) -> BinnedSpectrum:
    """Mirror the spectrum about delta = 0."""
    return BinnedSpectrum(-binned.center_hz[::-1], binned.mean[::-1], binned.sem[::-1],
                          binned.count[::-1], binned.bin_width, binned.reflected)


def reflect_subtract(binned: BinnedSpectrum) -> BinnedSpectrum:
    """value(-|delta|) - value(+|delta|) on the negative-detuning bins with a partner."""
    idx = {int(round(c / binned.bin_width)): i for i, c in enumerate(binned.center_hz)}
    neg = sorted(k for k in idx if k < 0 and -k in idx)
    if not neg:
        raise DomainError("no matched bin pairs about delta = 0")
    i_neg = np.array([idx[k] for k in neg])
    i_pos = np.array([idx[-k] for k in neg])
    return BinnedSpectrum(
        binned.center_hz[i_neg],
        binned.mean[i_neg] - binned.mean[i_pos],
        np.hypot(binned.sem[i_neg], binned.sem[i_pos]),
        np.minimum(binned.count[i_neg], binned.count[i_pos]),
        binned.bin_width,
        reflected=True,
    )


# --------------------------------------------------------------------------
# damped least squares


@dataclass
class LMResult:
    x: np.ndarray
    residual: np.ndarray
    jacobian: np.ndarray
    cost: float
    converged: bool
    n_eval: int
    n_iter: int
    message: str
    cost_history: list
    at_bound: np.ndarray


def numeric_jacobian(fun: Callable, x: np.ndarray, r0: Optional[np.ndarray] = None,
                     rel_step: float = 1e-6, lower=None, upper=None):
    """Central differences, falling back to one-sided steps at a bound."""
    x = np.asarray(x, dtype=float)
    cols = []
    n_eval = 0
    for i in range(x.size):
        h = rel_step * max(abs(x[i]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        if upper is not None and xp[i] > upper[i]:
            xp[i] = x[i]
        if lower is not None and xm[i] < lower[i]:
            xm[i] = x[i]
        fp = fun(xp) if xp[i] != x[i] else (r0 if r0 is not None else fun(x))
        fm = fun(xm) if xm[i] != x[i] else (r0 if r0 is not None else fun(x))
        n_eval += 2
        cols.append((np.asarray(fp) - np.asarray(fm)) / (xp[i] - xm[i]))
    return np.column_stack(cols), n_eval


def levenberg_marquardt(fun: Callable, x0, jac: Optional[Callable] = None, *,
                        lower=None, upper=None, max_iter: int = 200, xtol: float = 1e-8,
                        ftol: float = 1e-15, gtol: float = 1e-14, lam0: float = 1e-3,
                        rel_step: float = 1e-6) -> LMResult:
    """Minimise 0.5 ||fun(x)||^2 by damped Gauss-Newton steps.

    Each trial step solves (J^T J + lam D) dx = -J^T r with D the diagonal of
    J^T J, projected onto [lower, upper].  A step is accepted only if it
    lowers the cost, so the recorded cost history is non-increasing.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    x = np.clip(x, lower, upper)

    def jacobian(xv, rv):
        if jac is not None:
            return np.atleast_2d(np.asarray(jac(xv), dtype=float)), 0
        return numeric_jacobian(fun, xv, rv, rel_step, lower, upper)

    r = np.asarray(fun(x), dtype=float)
    n_eval = 1
    cost = 0.5 * float(r @ r)
    history = [cost]
    J, ne = jacobian(x, r)
    n_eval += ne
    lam = lam0
    converged = False
    message = "iteration cap reached"
    it = 0
    for it in range(1, max_iter + 1):
        g = J.T @ r
        if np.max(np.abs(g)) <= gtol * max(1.0, cost) or cost == 0.0:
            converged, message = True, "gradient below tolerance"
            break
        A = J.T @ J
        d = np.diag(A).copy()
        d[d <= 0] = 1.0
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            x_new = np.clip(x + step, lower, upper)
            step = x_new - x
            r_new = np.asarray(fun(x_new), dtype=float)
            n_eval += 1
            cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            lam *= 4.0
            if np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol):
                break
        if not accepted:
            converged = np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol)
            message = "no further decrease possible" + ("" if converged else " (damping cap)")
            break
        small_step = np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol)
        small_drop = cost - cost_new <= ftol * cost
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / 3.0, 1e-12)
        J, ne = jacobian(x, r)
        n_eval += ne
        if small_step or small_drop:
            converged = True
            message = "relative step below tolerance" if small_step else "cost change below tolerance"
            break
    at_bound = (x <= lower) | (x >= upper)
    return LMResult(x, r, J, cost, converged, n_eval, it, message, history, at_bound)


def _covariance(J: np.ndarray, cost: float, n_res: int, scale: bool = True) -> np.ndarray:
    p = J.shape[1]
    A = J.T @ J
    if not np.all(np.isfinite(A)) or np.linalg.matrix_rank(A) < p:
        return np.full((p, p), np.inf)
    cov = np.linalg.inv(A)
    if scale and n_res > p:
        cov = cov * (2.0 * cost / (n_res - p))
    return cov


# --------------------------------------------------------------------------
# Lorentzian centring


def lorentzian(x, center, amplitude, width, offset):
    return amplitude * width ** 2 / ((np.asarray(x) - center) ** 2 + width ** 2) + offset


def _lorentzian_jac(x, p):
    c, a, w, b = p
    u = (x - c) ** 2 + w ** 2
    return np.column_stack([
        2 * a * w ** 2 * (x - c) / u ** 2,
        w ** 2 / u,
        2 * a * w * (x - c) ** 2 / u ** 2,
        np.ones_like(x),
    ])


def _xy(data):
    if isinstance(data, BinnedSpectrum):
        return data.center_hz, data.mean
    if isinstance(data, ScanRecord):
        return data.detuning_hz, data.excitation
    x, y = data
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def lorentzian_fit(data, window_hz: Optional[tuple] = None, max_iter: int = 200) -> FitResult:
    """Fit A w^2 / ((delta - delta0)^2 + w^2) + B to a scan or binned spectrum (Hz)."""
    x, y = _xy(data)
    if window_hz is not None:
        keep = (x >= window_hz[0]) & (x <= window_hz[1])
        x, y = x[keep], y[keep]
    if x.size < 4:
        raise DomainError("Lorentzian fit needs at least 4 points")
    names = ("center_hz", "amplitude", "width_hz", "offset")
    offset0 = float(np.median(y))
    amp0 = float(np.max(y) - offset0)
    if not amp0 > 1e-12 * max(1.0, abs(offset0)):
        nan = (float("nan"), float("inf"))
        return FitResult({k: nan for k in names}, float(np.linalg.norm(y - offset0)), False, 0,
                         "no peak above the baseline", ["zero_amplitude"])
    c0 = float(x[np.argmax(y)])
    above = x[y >= offset0 + 0.5 * amp0]
    w0 = max(0.5 * float(above.max() - above.min()), 0.5 * float(np.min(np.abs(np.diff(x)))))
    p0 = np.array([c0, amp0, w0, offset0])
    res = levenberg_marquardt(lambda p: lorentzian(x, *p) - y, p0,
                              jac=lambda p: _lorentzian_jac(x, p), max_iter=max_iter)
    cov = _covariance(res.jacobian, res.cost, x.size)
    err = np.sqrt(np.abs(np.diag(cov)))
    vals = res.x.copy()
    vals[2] = abs(vals[2])
    params = {k: (float(v), float(e)) for k, v, e in zip(names, vals, err)}
    flags = []
    converged = res.converged and bool(np.all(np.isfinite(err)))
    message = res.message
    if not (abs(vals[1]) > 3 * err[1]) and np.isfinite(err[1]) and err[1] > 0:
        flags.append("zero_amplitude")
        converged = False
        message += "; amplitude not significant"
    if not np.all(np.isfinite(err)):
        flags.append("singular_covariance")
    return FitResult(params, float(np.linalg.norm(res.residual)), converged, res.n_eval,
                     message, flags, res.cost_history)


def center_scans(scans: Sequence[ScanRecord], window_hz: Optional[tuple] = None) -> list:
    """Shift each scan so its Lorentzian-fitted carrier sits at zero."""
    out = []
    for s in scans:
        fit = lorentzian_fit(s, window_hz)
        c = fit.value("center_hz")
        if not (fit.converged and math.isfinite(c)):
            raise RuntimeError(f"could not centre scan {s.scan_id!r}: {fit.message}")
        out.append(s.shifted(c))
    return out


# --------------------------------------------------------------------------
# scattering-length fit


@dataclass(frozen=True)
class SidebandModel:
    """Closed-form sideband with a^- (and optionally eta_Z) free.

    With a ``distribution`` the sideband is averaged over lattice sites drawn
    once from ``seed`` and reused for every evaluation, so the model is a
    smooth deterministic function of its parameters.  Without one, only the
    central site of ``template`` is used.
    """

    distribution: Optional[LatticeDistribution]
    template: ThermalLineshapeConfig
    n_samples: int = 400
    seed: int = 0
    stratified: bool = True
    engine: Engine = Engine.CLOSED_FORM
    workers: int = 1

    def evaluate(self, detuning_hz, a_over_a0: float, eta_z: Optional[float] = None) -> np.ndarray:
        """Sideband excitation fraction (no carrier) at the given detunings."""
        grid_hz = np.asarray(detuning_hz, dtype=float)
        order = np.argsort(grid_hz)
        grid = to_angular(grid_hz[order])
        trap = self.template.trap if eta_z is None else replace(self.template.trap,
                                                                eta_z=abs(eta_z))
        cfg = _with_a(self.template.replace(trap=trap, include_carrier=False),
                      a_over_a0 * CONSTANTS.bohr_radius)
        if self.distribution is None:
            if Engine(self.engine) == Engine.CLOSED_FORM:
                vals = isb_closed_form(cfg, grid).excitation
            else:
                vals = thermal_lineshape_bruteforce(cfg, grid).excitation
        else:
            dist = replace(self.distribution, center_trap=trap)
            vals = ensemble_average(dist, cfg, grid, self.n_samples, self.seed, self.engine,
                                    self.stratified, self.workers).excitation
        out = np.empty(grid_hz.size)
        out[order] = vals
        return out


def _with_a(cfg: ThermalLineshapeConfig, a: float) -> ThermalLineshapeConfig:
    inter = InteractionParams.from_scattering_length(a, cfg.trap, cfg.thermal,
                                                     cfg.interaction.model, cfg.truncation)
    return cfg.replace(interaction=inter)


def fit_scattering_length(data: BinnedSpectrum, model: SidebandModel, a_guess_a0: float = -100.0,
                          free_eta: bool = False, eta_guess: Optional[float] = None,
                          mask: Optional[np.ndarray] = None, carrier_cut: float = CARRIER_CUT,
                          max_iter: int = 200,
                          a_range: tuple = (-A_BOUND_A0, A_BOUND_A0)) -> FitResult:
    """Weighted least squares of the sideband model to binned (or reflected) data.

    Weights are 1/sem^2; bins with sem = 0 take the median positive sem, or
    unit weight when no bin has a positive sem.  Bins with
    |delta| < carrier_cut * Omega^B and bins excluded by ``mask`` are dropped.
    When ``data.reflected`` the model is reflected the same way.  ``a_range``
    restricts a^- (in a0), e.g. to one sign for a two-start comparison.
    """
    rabi_hz = model.template.drive.rabi_bare / (2 * math.pi)
    keep = np.abs(data.center_hz) >= carrier_cut * rabi_hz
    if mask is not None:
        keep &= ~np.asarray(mask, dtype=bool)
    if keep.sum() < (2 if free_eta else 1) + 1:
        raise DomainError("too few bins left after the carrier cut and mask")
    x = data.center_hz[keep]
    y = data.mean[keep]
    sem = data.sem[keep]
    pos = sem[sem > 0]
    fill = float(np.median(pos)) if pos.size else 1.0
    sigma = np.where(sem > 0, sem, fill)
    reflected = data.reflected

    def predict(p):
        eta = p[1] if free_eta else None
        if reflected:
            both = model.evaluate(np.concatenate([x, -x]), p[0], eta)
            return both[:x.size] - both[x.size:]
        return model.evaluate(x, p[0], eta)

    def residual(p):
        return (predict(p) - y) / sigma

    eta0 = model.template.trap.eta_z if eta_guess is None else eta_guess
    p0 = np.array([a_guess_a0, eta0] if free_eta else [a_guess_a0], dtype=float)
    lo, hi = max(a_range[0], -A_BOUND_A0), min(a_range[1], A_BOUND_A0)
    if not lo < hi:
        raise DomainError("empty a_range")
    lower = np.array([lo, 0.0] if free_eta else [lo])
    upper = np.array([hi, 1.0] if free_eta else [hi])
    res = levenberg_marquardt(residual, p0, lower=lower, upper=upper, max_iter=max_iter)
    cov = _covariance(res.jacobian, res.cost, x.size)
    err = np.sqrt(np.abs(np.diag(cov)))
    names = ["a_eg_minus_a0"] + (["eta_z"] if free_eta else [])
    params = {k: (float(v), float(e)) for k, v, e in zip(names, res.x, err)}
    # derived: height of the fitted sideband and its delta-method error
    curve = predict(res.x)
    i_pk = int(np.argmax(np.abs(curve)))
    h = 1e-6 * max(1.0, abs(res.x[0]))
    pa, pb = res.x.copy(), res.x.copy()
    pa[0] += h
    pb[0] -= h
    dpk = (predict(pa)[i_pk] - predict(pb)[i_pk]) / (2 * h)
    pk_err = abs(dpk) * err[0] if np.isfinite(err[0]) else float("inf")
    params["peak_excitation"] = (float(curve[i_pk]), float(pk_err))
    flags = []
    converged = res.converged and bool(np.all(np.isfinite(err)))
    message = res.message
    if res.at_bound[0]:
        flags.append("a_at_bound")
        message += "; a reached the bound of its range"
    if not np.all(np.isfinite(err)):
        flags.append("singular_covariance")
        message += "; parameters not identifiable from the data"
    return FitResult(params, float(np.linalg.norm(res.residual)), converged, res.n_eval,
                     message, flags, res.cost_history)


# --------------------------------------------------------------------------
# synthetic data and scan files


def full_lineshape(model: SidebandModel, detuning_hz, a_over_a0: float) -> np.ndarray:
    """Carrier of a homogeneous drive plus the ensemble-averaged sideband."""
    drive = model.template.drive
    carrier = rabi_kernel(drive.duration, to_angular(np.asarray(detuning_hz, dtype=float)),
                          drive.rabi_bare)
    return carrier + model.evaluate(detuning_hz, a_over_a0)


def synthesize_scans(truth: Callable[[np.ndarray], np.ndarray], n_scans: int = 20,
                     span_hz: float = 300.0, step_hz: float = 2.0, noise: float = 0.0,
                     seed: int = 0, drift_hz: float = 0.0) -> list:
    """Scans stepping ``step_hz`` across +-span_hz, alternating up and down.

    Each scan has a random carrier offset of up to +-drift_hz (seen as a
    shift of the recorded detunings) and Gaussian noise of std ``noise``.
    """
    if n_scans < 1 or not step_hz > 0 or not span_hz > 0 or noise < 0:
        raise DomainError("invalid synthetic-scan parameters")
    base = np.arange(-span_hz, span_hz + 0.5 * step_hz, step_hz)
    scans = []
    for i in range(n_scans):
        rng = np.random.default_rng([int(seed), i])
        offset = drift_hz * (2 * rng.random() - 1) if drift_hz > 0 else 0.0
        y = truth(base) + (rng.normal(0.0, noise, base.size) if noise > 0 else 0.0)
        x = base + offset
        if i % 2:
            scans.append(ScanRecord(x[::-1], y[::-1], ScanDirection.DOWN, f"scan{i:03d}"))
        else:
            scans.append(ScanRecord(x, y, ScanDirection.UP, f"scan{i:03d}"))
    return scans


def read_scan_csv(path) -> ScanRecord:
    """Read a ``detuning_hz,excitation`` file; direction is inferred from the order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:2] != ["detuning_hz", "excitation"]:
            raise DomainError(f"{path}: expected header 'detuning_hz,excitation'")
        rows = [(float(r[0]), float(r[1])) for r in reader if r and r[0].strip()]
    if len(rows) < 2:
        raise DomainError(f"{path}: a scan needs at least two points")
    x, y = np.array(rows).T
    direction = ScanDirection.UP if x[-1] > x[0] else ScanDirection.DOWN
    return ScanRecord(x, y, direction, str(path))


def write_scan_csv(path, scan: ScanRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["detuning_hz", "excitation"])
        for a, b in zip(scan.detuning_hz, scan.excitation):
            w.writerow([repr(float(a)), repr(float(b))])
