"""Command-line front end.

    isbsim simulate --config run.json --out results/ [--seed N]
    isbsim analyze  --config run.json --out results/
    isbsim fit      --config run.json --out results/
    isbsim validate --config run.json

Configs are JSON.  At this boundary frequencies are in Hz, temperatures in
microkelvin, lengths in micrometres and scattering lengths in Bohr radii.
Exit codes: 0 success, 2 invalid config, 3 numerical failure, 4 I/O error.
Errors are also printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (SidebandModel, center_scans, concatenate_and_bin, fit_scattering_length,
                       full_lineshape, read_scan_csv, reflect_subtract, synthesize_scans)
from .core import (DomainError, Direction, DriveParams, ModeConfiguration, Spectrum,
                   ThermalState, TrapGeometry, TruncationError, detuning_grid,
                   scattering_length)
from .ensemble import Engine as SiteEngine
from .ensemble import LatticeDistribution, ensemble_average
from .overlap import (InteractionParams, ThermalModel, TruncationPolicy, gamma_ratio,
                      transverse_factor, u_param)
from .spinmodel import (SpinSystem, collective_spectrum, lineshape_exact, lineshape_sidebands,
                        rabi_kernel)
from .thermal import (Fidelity, ThermalLineshapeConfig, isb_closed_form, regime_checks,
                      thermal_lineshape_bruteforce)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

MODES = ("simulate", "analyze", "fit")
ENGINES = ("exact", "sidebands", "closed_form", "brute_force", "ensemble")
_FIT_ENGINES = ("closed_form", "ensemble")


class ConfigError(DomainError):
    pass


@dataclass
class RunConfig:
    mode: str
    engine: str
    trap: TrapGeometry
    thermal: ThermalState
    drive: DriveParams
    a_over_a0: float
    thermal_model: ThermalModel
    grid_hz: tuple
    seed: int = 0
    workers: int = 1
    output_path: str = "."
    modes: tuple = (1, 0)
    u_hz: Optional[float] = None
    linearized: bool = False
    fidelity: Fidelity = Fidelity.SIDEBAND_FORMULA
    include_carrier: bool = False
    truncation: TruncationPolicy = field(default_factory=TruncationPolicy)
    lattice: Optional[LatticeDistribution] = None
    n_samples: int = 400
    stratified: bool = False
    analysis: dict = field(default_factory=dict)
    synthetic_scans: Optional[dict] = None
    raw: dict = field(default_factory=dict)
    base_dir: str = "."

    def thermal_config(self) -> ThermalLineshapeConfig:
        return ThermalLineshapeConfig.from_scattering_length(
            scattering_length(self.a_over_a0), self.trap, self.thermal, self.drive,
            self.thermal_model, truncation=self.truncation, fidelity=self.fidelity,
            include_carrier=self.include_carrier)

    def grid(self) -> np.ndarray:
        """Angular detuning grid (rad/s)."""
        return detuning_grid(*self.grid_hz)


# --------------------------------------------------------------------------
# parsing


def _num(d: dict, key: str, default=None, *, positive=False, nonneg=False):
    if key not in d:
        if default is None:
            raise ConfigError(f"missing required field '{key}'")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"field '{key}' must be a finite number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"field '{key}' must be positive, got {v!r}")
    if nonneg and v < 0:
        raise ConfigError(f"field '{key}' must be non-negative, got {v!r}")
    return float(v)


def parse_config(raw: dict, base_dir: str = ".", seed: Optional[int] = None) -> RunConfig:
    """Validate a config mapping and build the typed run configuration."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    mode = str(raw.get("mode", "simulate")).lower()
    engine = str(raw.get("engine", "closed_form")).lower()
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if engine not in ENGINES:
        raise ConfigError(f"engine must be one of {ENGINES}")
    if mode == "fit" and engine not in _FIT_ENGINES:
        raise ConfigError(f"fit mode needs engine in {_FIT_ENGINES}, got '{engine}'")
    phys = raw.get("physics", {})
    t = phys.get("trap", {})
    th = phys.get("thermal", {})
    dr = phys.get("drive", {})
    it = phys.get("interaction", {})
    sp = phys.get("spin", {})
    te = phys.get("thermal_engine", {})
    try:
        trap = TrapGeometry.from_hz(_num(t, "omega_x_hz", positive=True),
                                    _num(t, "omega_y_hz", positive=True),
                                    _num(t, "omega_z_hz", positive=True),
                                    eta_z=_num(t, "eta_z", 0.0, nonneg=True),
                                    waist_perp=_num(t, "waist_perp_um", 30.0, positive=True) * 1e-6)
        temp = _num(th, "temp_uk", 0.0, nonneg=True)
        thermal = ThermalState(_num(th, "temp_x_uk", temp, nonneg=True) * 1e-6,
                               _num(th, "temp_y_uk", temp, nonneg=True) * 1e-6,
                               _num(th, "temp_z_uk", temp, nonneg=True) * 1e-6)
        drive = DriveParams(2 * math.pi * _num(dr, "rabi_hz", positive=True),
                            _num(dr, "pulse_area", 1.0, positive=True),
                            direction=Direction(dr.get("direction", "GtoE")))
        g = raw.get("grid", {})
        grid = (_num(g, "min_hz"), _num(g, "max_hz"), _num(g, "step_hz", positive=True))
        if not grid[0] < grid[1]:
            raise ConfigError("grid min_hz must be below max_hz")
        if grid[2] > grid[1] - grid[0]:
            raise ConfigError("grid step_hz exceeds the grid span")
        policy = TruncationPolicy(_num(te, "tail_weight_tol", 1e-6, positive=True),
                                  int(_num(te, "max_mode", 4000, positive=True)))
        lat = phys.get("lattice")
        lattice = None
        n_samples = 400
        stratified = False
        if lat is not None or engine == "ensemble":
            lat = lat or {}
            occ = {int(k): float(v) for k, v in lat.get("occupancy", {"2": 1.0}).items()}
            radius = lat.get("occupied_radius_um")
            lattice = LatticeDistribution(
                trap, geometry_kind=lat.get("geometry", "2D"),
                sigma_h=_num(lat, "sigma_h_um", 8.0, positive=True) * 1e-6,
                sigma_v=_num(lat, "sigma_v_um", 30.0, positive=True) * 1e-6,
                n_rows=int(_num(lat, "n_rows", 100, positive=True)),
                waist_perp=trap.waist_perp, occupancy_model=occ,
                placement=lat.get("placement", "lattice"),
                occupied_radius=None if radius is None else float(radius) * 1e-6)
            n_samples = int(_num(lat, "n_samples", 400, positive=True))
            stratified = bool(lat.get("stratified", False))
        modes = tuple(int(m) for m in sp.get("modes", range(int(sp.get("n_atoms", 2)))))
        ModeConfiguration(modes)
        cfg = RunConfig(
            mode=mode, engine=engine, trap=trap, thermal=thermal, drive=drive,
            a_over_a0=_num(it, "a_eg_minus_a0", 0.0),
            thermal_model=ThermalModel(it.get("thermal_model", "asymptotic")),
            grid_hz=grid,
            seed=int(raw.get("seed", 0)) if seed is None else int(seed),
            workers=int(raw.get("workers", os.cpu_count() or 1)),
            output_path=str(raw.get("output_path", ".")),
            modes=modes,
            u_hz=None if sp.get("u_hz") is None else _num(sp, "u_hz"),
            linearized=bool(sp.get("linearized", False)),
            fidelity=Fidelity(te.get("fidelity", "sideband_formula")),
            include_carrier=bool(te.get("include_carrier", False)),
            truncation=policy, lattice=lattice, n_samples=n_samples, stratified=stratified,
            analysis=dict(raw.get("analysis", {})),
            synthetic_scans=raw.get("synthetic_scans"),
            raw=raw, base_dir=base_dir)
    except ConfigError:
        raise
    except (DomainError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if mode in ("analyze", "fit") and not cfg.analysis.get("scans"):
        raise ConfigError(f"{mode} mode needs analysis.scans (list of CSV paths)")
    if engine == "exact" and len(modes) > 12:
        raise ConfigError("exact engine is limited to 12 atoms")
    return cfg


def load_config(path, seed: Optional[int] = None) -> RunConfig:
    path = Path(path)
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(raw, str(path.parent), seed)


# --------------------------------------------------------------------------
# validation report


def physics_warnings(cfg: RunConfig) -> list:
    """Regime checks for the closed-form sideband and the resolved-sideband picture."""
    notes = []
    if cfg.engine in ("closed_form", "brute_force", "ensemble"):
        notes.extend(msg for _, msg in regime_checks(cfg.thermal_config()))
    if cfg.engine in ("closed_form", "ensemble") and cfg.mode == "simulate":
        lo, hi = cfg.grid_hz[0], cfg.grid_hz[1]
        cut = 5 * cfg.drive.rabi_bare / (2 * math.pi)
        if lo < cut and hi > -cut:
            notes.append(f"grid enters |delta| < {cut:.3g} Hz where the closed form is not valid")
    if cfg.a_over_a0 != 0 and len(cfg.modes) >= 2:
        mean_u = InteractionParams.from_scattering_length(
            scattering_length(cfg.a_over_a0), cfg.trap, cfg.thermal, cfg.thermal_model,
            cfg.truncation).mean_u_thermal
        gamma = gamma_ratio(len(cfg.modes), mean_u, cfg.drive.rabi_bare)
        if gamma < 1:
            notes.append(f"gamma = {gamma:.3g} < 1: interaction sidebands are not resolved")
    return notes


def validate_raw(raw: dict, base_dir: str = ".") -> dict:
    """Violations and warnings for a config, without running anything."""
    violations, notes = [], []
    try:
        cfg = parse_config(raw, base_dir)
    except (ConfigError, DomainError) as exc:
        violations.append(str(exc))
        return {"violations": violations, "warnings": notes}
    try:
        notes.extend(physics_warnings(cfg))
    except (DomainError, TruncationError) as exc:
        violations.append(str(exc))
    for p in cfg.analysis.get("scans", []):
        if not _expand(base_dir, p):
            violations.append(f"scan file not found: {p}")
    return {"violations": violations, "warnings": notes}


def _expand(base_dir: str, pattern: str) -> list:
    path = Path(base_dir) / pattern
    if any(ch in pattern for ch in "*?["):
        return sorted(str(p) for p in path.parent.glob(path.name) if p.is_file())
    return [str(path)] if path.is_file() else []


def scan_paths(cfg: RunConfig) -> list:
    """Scan files named in the config; entries may be glob patterns relative to it."""
    out = []
    for pattern in cfg.analysis.get("scans", []):
        found = _expand(cfg.base_dir, pattern)
        if not found:
            raise FileNotFoundError(f"no scan file matches {pattern!r}")
        out.extend(found)
    return out


# --------------------------------------------------------------------------
# engines


def _spin_u(cfg: RunConfig) -> float:
    if cfg.u_hz is not None:
        return 2 * math.pi * cfg.u_hz
    a = scattering_length(cfg.a_over_a0)
    return u_param(a, cfg.trap) * transverse_factor(cfg.trap, cfg.thermal, cfg.thermal_model,
                                                    cfg.truncation)


def simulate_spectrum(cfg: RunConfig) -> Spectrum:
    grid = cfg.grid()
    if cfg.engine in ("exact", "sidebands"):
        sys_ = SpinSystem.from_modes(cfg.modes, cfg.trap.eta_z, cfg.drive.rabi_bare, _spin_u(cfg),
                                     cfg.linearized)
        if cfg.engine == "exact":
            return lineshape_exact(sys_, cfg.drive, grid)
        return lineshape_sidebands(collective_spectrum(sys_), sys_.n_atoms, cfg.drive, grid)
    tcfg = cfg.thermal_config()
    if cfg.engine == "closed_form":
        spec = isb_closed_form(tcfg, grid)
        if cfg.include_carrier:
            spec.excitation = spec.excitation + rabi_kernel(cfg.drive.duration, grid,
                                                            cfg.drive.rabi_bare)
        return spec
    if cfg.engine == "brute_force":
        return thermal_lineshape_bruteforce(tcfg, grid)
    return ensemble_average(cfg.lattice, tcfg, grid, cfg.n_samples, cfg.seed,
                            SiteEngine.CLOSED_FORM, cfg.stratified, cfg.workers)


def sideband_model(cfg: RunConfig) -> SidebandModel:
    dist = cfg.lattice if cfg.engine == "ensemble" else None
    return SidebandModel(dist, cfg.thermal_config(), cfg.n_samples, cfg.seed,
                         stratified=cfg.stratified, workers=cfg.workers)


# --------------------------------------------------------------------------
# output


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def spectrum_csv(detuning_hz, values, sigma=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["detuning_hz", "excitation_fraction", "sigma"])
    sig = np.zeros(len(values)) if sigma is None else sigma
    for a, b, c in zip(detuning_hz, values, sig):
        w.writerow([_fmt(a), _fmt(b), _fmt(c)])
    return buf.getvalue()


def atomic_write(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# run


class _Timer:
    def __init__(self):
        self.stages = {}

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.stages[name] = time.perf_counter() - self.t0
                return False

        return _Ctx()


def run(cfg: RunConfig, out_dir, echo=print) -> dict:
    """Execute ``cfg`` and write its outputs under ``out_dir``; returns the manifest."""
    started = _dt.datetime.now(_dt.timezone.utc)
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    timer = _Timer()
    notes = physics_warnings(cfg)
    outputs = {}
    pending = {}

    if cfg.mode == "simulate":
        with timer.stage("simulate"):
            spec = simulate_spectrum(cfg)
        notes.extend(m for m in spec.warnings if m not in notes)
        n_bad = int(spec.out_of_range(1e-9).sum())
        if n_bad:
            notes.append(f"{n_bad} points outside [0, 1]")
        pending["spectrum.csv"] = spectrum_csv(spec.detuning_hz, spec.excitation, spec.sigma)
        if cfg.synthetic_scans:
            with timer.stage("synthesize"):
                pending.update(_synth_files(cfg))
    else:
        with timer.stage("read"):
            scans = [read_scan_csv(p) for p in scan_paths(cfg)]
        a = cfg.analysis
        with timer.stage("reduce"):
            window = a.get("center_window_hz")
            if window:
                scans = center_scans(scans, (-float(window), float(window)))
            binned = concatenate_and_bin(scans, float(a.get("bin_width_hz", 4.0)))
            reduced = reflect_subtract(binned) if a.get("reflect", True) else binned
        pending["spectrum.csv"] = spectrum_csv(reduced.center_hz, reduced.mean, reduced.sem)
        n_deg = int(reduced.degenerate.sum())
        if n_deg:
            notes.append(f"{n_deg} bins hold a single point; their sem is reported as 0")
        if cfg.mode == "fit":
            with timer.stage("fit"):
                mask = None
                if a.get("mask_hz"):
                    mask = np.zeros(len(reduced), dtype=bool)
                    for lo, hi in a["mask_hz"]:
                        mask |= (reduced.center_hz >= lo) & (reduced.center_hz <= hi)
                result = fit_scattering_length(
                    reduced, sideband_model(cfg), float(a.get("a_guess_a0", -100.0)),
                    free_eta=bool(a.get("free_eta", False)), mask=mask,
                    carrier_cut=float(a.get("carrier_cut", 5.0)))
            if not result.converged:
                notes.append(f"fit did not converge: {result.message}")
            for flag in result.flags:
                notes.append(f"fit flag: {flag}")
            pending["fit_result.json"] = _json(result.to_dict())

    for msg in notes:
        echo(f"warning: {msg}", file=sys.stderr)
    manifest = {
        "artifact": "isbsim",
        "version": __version__,
        "config": cfg.raw,
        "seed": cfg.seed,
        "started_utc": started.isoformat(),
        "wall_clock_s": None,
        "stage_timings_s": timer.stages,
        "warnings": notes,
        "outputs": sorted(pending),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(pending.items()):
        target = out_dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        atomic_write(target, text)
        outputs[name] = str(target)
    manifest["wall_clock_s"] = time.perf_counter() - t0
    atomic_write(out_dir / "manifest.json", _json(manifest))
    return manifest


def _synth_files(cfg: RunConfig) -> dict:
    s = cfg.synthetic_scans
    model = sideband_model(cfg)
    truth = lambda x: full_lineshape(model, x, cfg.a_over_a0)
    scans = synthesize_scans(truth, int(s.get("n_scans", 20)), float(s.get("span_hz", 300.0)),
                             float(s.get("step_hz", 2.0)), float(s.get("noise", 0.0)),
                             cfg.seed, float(s.get("drift_hz", 0.0)))
    files = {}
    for sc in scans:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["detuning_hz", "excitation"])
        for a, b in zip(sc.detuning_hz, sc.excitation):
            w.writerow([_fmt(a), _fmt(b)])
        files[f"scans/{sc.scan_id}.csv"] = buf.getvalue()
    return files


# --------------------------------------------------------------------------
# entry point


def _fail(category: str, code: int, exc: BaseException) -> int:
    print(json.dumps({"error": category, "exit_code": code, "message": str(exc)}), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="isbsim",
                                 description="Interaction-sideband lineshape simulation and fitting")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "analyze", "fit", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        if name != "validate":
            p.add_argument("--out", default=None, help="output directory (default: config output_path)")
            p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except OSError as exc:
            return _fail("io", EXIT_IO, exc)
        except json.JSONDecodeError as exc:
            print(_json({"violations": [f"not valid JSON: {exc}"], "warnings": []}), end="")
            return EXIT_CONFIG
        report = validate_raw(raw, str(Path(args.config).parent))
        print(_json(report), end="")
        return EXIT_CONFIG if report["violations"] else EXIT_OK
    try:
        cfg = load_config(args.config, args.seed)
        if cfg.mode != args.command:
            raw = dict(cfg.raw, mode=args.command)
            cfg = parse_config(raw, cfg.base_dir, args.seed)
    except OSError as exc:
        return _fail("io", EXIT_IO, exc)
    except (ConfigError, DomainError) as exc:
        return _fail("config", EXIT_CONFIG, exc)
    out = args.out if args.out is not None else str(Path(cfg.base_dir) / cfg.output_path)
    try:
        run(cfg, out)
    except OSError as exc:
        return _fail("io", EXIT_IO, exc)
    except DomainError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except (TruncationError, ArithmeticError, RuntimeError, MemoryError,
            np.linalg.LinAlgError) as exc:
        return _fail("numerical", EXIT_NUMERIC, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
