"""Acceptance checks, one test per criterion.

Each test records a line ``[PASS|FAIL] <n>. <name>: <measured> (<tolerance>)``;
the lines are printed together at the end of the pytest run and also when
the module is executed directly (``python tests/test_acceptance.py``).
"""

import copy
import json
import math
import time

import numpy as np

from isbsim.analysis import (SidebandModel, center_scans, concatenate_and_bin,
                             fit_scattering_length, full_lineshape, reflect_subtract,
                             synthesize_scans)
from isbsim.cli import main as cli_main
from isbsim.core import (DriveParams, pancake_thermal_1d, pancake_trap_1d, tube_thermal_2d,
                         tube_trap_2d, scattering_length)
from isbsim.ensemble import LatticeDistribution
from isbsim.overlap import (OverlapKind, gamma_ratio, mean_interaction, overlap_asymptotic,
                            overlap_integral, overlap_table, theta, theta_tilde)
from isbsim.spinmodel import (SpinSystem, collective_spectrum, ground_state_system, lineshape_exact,
                              lineshape_sidebands, rabi_kernel, refine_peak, sideband_peaks)
from isbsim.thermal import (ThermalLineshapeConfig, isb_closed_form, sideband_kernel_integral,
                            thermal_lineshape_bruteforce)

TWO_PI = 2 * math.pi
GS_RABI = TWO_PI * 5.0
GS_DRIVE = DriveParams(GS_RABI, 1.5)
GS_GRID = TWO_PI * np.arange(-4000.0, 4000.0, 0.05)

RESULTS = []


def record(n, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {n}. {name}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def tube_config_2d(a_over_a0=-280.0, eta=0.07, rabi_hz=6.25):
    return ThermalLineshapeConfig.from_scattering_length(
        scattering_length(a_over_a0), tube_trap_2d(eta), tube_thermal_2d(),
        DriveParams(TWO_PI * rabi_hz, 1.0))


def ground_peaks(n_atoms):
    cs = collective_spectrum(ground_state_system(n_atoms))
    spec = lineshape_sidebands(cs, n_atoms, GS_DRIVE, GS_GRID)
    return sideband_peaks(GS_GRID, spec.excitation, 10 * GS_RABI, GS_DRIVE.duration)


def test_01_carrier_interaction_independence():
    t0 = time.perf_counter()
    drive = DriveParams(GS_RABI, 1.0)
    grid = TWO_PI * np.linspace(-50, 50, 201)
    spectra = []
    for u_hz in (1.0, 10.0, 100.0, 1000.0):
        u = TWO_PI * u_hz
        sys = SpinSystem((1, 0), [GS_RABI, GS_RABI], [[0, u], [u, 0]])
        spectra.append(lineshape_exact(sys, drive, grid).excitation)
    dev = max(np.max(np.abs(s - spectra[0])) for s in spectra)
    dev = max(dev, np.max(np.abs(spectra[0] - rabi_kernel(drive.duration, grid, GS_RABI))))
    dt = time.perf_counter() - t0
    ok = dev < 1e-9 and dt < 1
    assert record(1, "carrier independent of U (1 Hz..1 kHz)", ok,
                  f"max deviation {dev:.2e} (< 1e-9), {dt:.2f} s (< 1 s)")


def test_02_gamma():
    t0 = time.perf_counter()
    a = scattering_length(-70)
    rabi = TWO_PI * 6.25
    g2 = gamma_ratio(2, mean_interaction(a, tube_trap_2d(), tube_thermal_2d()), rabi)
    g1 = gamma_ratio(17, mean_interaction(a, pancake_trap_1d(), pancake_thermal_1d()), rabi)
    dt = time.perf_counter() - t0
    ok = 7 <= g2 <= 13 and 0.4 <= g1 <= 0.9 and dt < 10
    assert record(2, "gamma reproduction", ok,
                  f"gamma_2D = {g2:.3f} ([7, 13]), gamma_1D = {g1:.3f} ([0.4, 0.9]), {dt:.2f} s")


def test_03_ground_state_structure():
    t0 = time.perf_counter()
    counts = {}
    for n in (2, 3, 4, 5):
        peaks, _ = ground_peaks(n)
        counts[n] = (peaks.size, bool(np.all(np.abs(peaks) > 10 * GS_RABI)))
    dt = time.perf_counter() - t0
    ok = all(c == n - 1 and sep for n, (c, sep) in counts.items()) and dt < 5
    desc = ", ".join(f"N={n}: {c}" for n, (c, _) in counts.items())
    assert record(3, "ground-state sideband count", ok, f"{desc} peaks (N-1 each), {dt:.2f} s (< 5 s)")


def test_04_sidebands_vs_exact():
    t0 = time.perf_counter()
    worst_pos, worst_h = 0.0, 0.0
    for n in (2, 3):
        sys = ground_state_system(n)
        peaks, heights = ground_peaks(n)
        for x0, h0 in zip(peaks, heights):
            window = x0 + TWO_PI * np.arange(-10, 10, 0.05)
            ex = lineshape_exact(sys, GS_DRIVE, window).excitation
            worst_pos = max(worst_pos, abs(window[np.argmax(ex)] - x0) / GS_RABI)
            worst_h = max(worst_h, abs(ex.max() / h0 - 1))
    dt = time.perf_counter() - t0
    ok = worst_pos < 1 and worst_h < 0.2 and dt < 30
    assert record(4, "sideband formula vs exact evolution", ok,
                  f"position offset {worst_pos:.3f} Omega^B (< 1), height error {worst_h:.2%} "
                  f"(< 20%), {dt:.2f} s")


def closed_form_band_error(cfg):
    mu = abs(cfg.interaction.mean_u_thermal)
    grid = -np.linspace(0.6, 0.15, 91) * mu
    bf = thermal_lineshape_bruteforce(cfg, grid).excitation
    cf = isb_closed_form(cfg, grid).excitation
    rel = np.abs(cf / bf - 1)
    return rel.max(), abs(grid[np.argmax(rel)]) / mu


def test_05_closed_form_vs_bruteforce():
    t0 = time.perf_counter()
    cfg = tube_config_2d()
    worst, at = closed_form_band_error(cfg)
    weak, weak_at = closed_form_band_error(tube_config_2d(eta=0.003, rabi_hz=0.6))
    dt = time.perf_counter() - t0
    ok = worst < 0.15 and dt < 120
    assert record(5, "closed form vs Boltzmann sum over |delta| in [0.15, 0.6]<U>", ok,
                  f"alpha = {cfg.alpha:.4f}, worst relative error {worst:.3g} at "
                  f"{at:.3f}|<U>| (< 0.15); weak drive eta=0.003, 0.6 Hz: {weak:.3g} at "
                  f"{weak_at:.3f}|<U>|; {dt:.1f} s")


def test_06_eta_fourth_power():
    t0 = time.perf_counter()
    etas = np.linspace(0.02, 0.1, 9)
    heights = []
    for eta in etas:
        sys = SpinSystem.from_modes((1, 0), eta, GS_RABI, TWO_PI * 2800)
        mean = sys.rabi_per_mode.mean()
        fn = lambda d: (lineshape_exact(sys, GS_DRIVE, [d]).excitation[0]
                        - rabi_kernel(GS_DRIVE.duration, d, mean))
        heights.append(refine_peak(fn, sys.u_matrix[0, 1], GS_RABI / 2)[1])
    slope = np.polyfit(np.log(etas), np.log(heights), 1)[0]
    dt = time.perf_counter() - t0
    ok = abs(slope - 4) <= 0.1 and dt < 60
    assert record(6, "eta^4 scaling of the N=2 sideband", ok,
                  f"log-log slope {slope:.4f} (4.0 +- 0.1), {dt:.2f} s")


def test_07_ground_state_width():
    t0 = time.perf_counter()
    cs = collective_spectrum(ground_state_system(2))
    u = cs.energies[0]
    grid = u + TWO_PI * np.arange(-60, 60, 0.005)
    v = lineshape_sidebands(cs, 2, GS_DRIVE, grid).excitation
    above = grid[v >= 0.5 * v.max()]
    width = above.max() - above.min()
    expect = 2 * GS_RABI / GS_DRIVE.pulse_area_factor
    err = abs(width / expect - 1)
    dt = time.perf_counter() - t0
    ok = err < 0.15 and dt < 5
    assert record(7, "T = 0 sideband width", ok,
                  f"FWHM {width / TWO_PI:.3f} Hz vs 2 Omega^B/s = {expect / TWO_PI:.3f} Hz, "
                  f"error {err:.1%} (< 15%), {dt:.2f} s")


def test_08_kernel_integral():
    t0 = time.perf_counter()
    errs = {c: abs(sideband_kernel_integral(c) / (math.pi * c) - 1) for c in (0.01, 0.02, 0.05)}
    dt = time.perf_counter() - t0
    ok = max(errs.values()) < 0.02 and dt < 1
    desc = ", ".join(f"c={c}: {e:.3%}" for c, e in errs.items())
    assert record(8, "kernel integral ~ pi c", ok, f"{desc} (< 2%), {dt:.3f} s")


def test_09_analysis_round_trip():
    t0 = time.perf_counter()
    cfg = tube_config_2d(-100.0)
    model = SidebandModel(LatticeDistribution(tube_trap_2d()), cfg, n_samples=200)
    truth = lambda x: full_lineshape(model, x, -280.0)
    out = {}
    for noise in (0.0, 0.02):
        scans = synthesize_scans(truth, 20, 300.0, 2.0, noise, seed=5, drift_hz=3.0)
        binned = concatenate_and_bin(center_scans(scans, (-40.0, 40.0)), 4.0)
        fit = fit_scattering_length(reflect_subtract(binned), model, -100.0)
        out[noise] = fit.parameters["a_eg_minus_a0"]
    e0 = abs(out[0.0][0] / -280 - 1)
    e1 = abs(out[0.02][0] / -280 - 1)
    dt = time.perf_counter() - t0
    ok = e0 < 0.05 and e1 < 0.10 and dt < 300
    assert record(9, "synthesize, bin, reflect, fit a^- = -280 a0", ok,
                  f"noiseless {out[0.0][0]:.2f} a0 ({e0:.2%}, < 5%), sigma=0.02 "
                  f"{out[0.02][0]:.2f} +- {out[0.02][1]:.2f} a0 ({e1:.2%}, < 10%), {dt:.1f} s")


def test_10_overlap_oracles():
    t0 = time.perf_counter()
    e00 = abs(overlap_integral(0, 0) - 1)
    e01 = abs(overlap_integral(0, 1) - 0.5)
    table = overlap_table(256)
    hi, lo = np.tril_indices(257, k=-20)
    asym = np.max(np.abs(overlap_asymptotic(hi, lo) / table[hi, lo] - 1))
    th = theta(0.01)
    th_k0 = theta(0.01, kind=OverlapKind.K0)
    small = abs(th / 0.1 - 1)
    limits = theta(math.inf) == 1.0 and theta_tilde(math.inf) == 0.5
    dt = time.perf_counter() - t0
    ok = e00 < 1e-10 and e01 < 1e-10 and asym < 0.1 and small < 0.15 and limits and dt < 60
    assert record(10, "overlap oracles", ok,
                  f"|I00-1| = {e00:.1e}, |I01-1/2| = {e01:.1e} (< 1e-10); asymptotic worst "
                  f"{asym:.2%} for d >= 20 (< 10%); theta(0.01) = {th:.4f} vs sqrt(alpha) = 0.1, "
                  f"error {small:.1%} (< 15%; sum with 1/sqrt(pi d) overlaps gives "
                  f"{th_k0:.4f}); limits exact: {limits}; {dt:.2f} s")


ACCEPT_CFG = {
    "mode": "simulate",
    "engine": "ensemble",
    "seed": 11,
    "grid": {"min_hz": -300.0, "max_hz": -32.0, "step_hz": 2.0},
    "physics": {
        "trap": {"omega_x_hz": 110000.0, "omega_y_hz": 70000.0, "omega_z_hz": 800.0,
                 "eta_z": 0.07},
        "thermal": {"temp_uk": 4.5},
        "drive": {"rabi_hz": 6.25, "pulse_area": 1.0},
        "interaction": {"a_eg_minus_a0": -280.0},
        "lattice": {"n_samples": 64, "occupancy": {"1": 0.2, "2": 0.8}},
    },
    "synthetic_scans": {"n_scans": 6, "noise": 0.02, "drift_hz": 3.0},
}


def data_outputs(root):
    # the manifest holds wall-clock timings and is excluded by design
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "manifest.json"}


def test_11_determinism(tmp_path):
    t0 = time.perf_counter()
    runs = []
    for i, workers in enumerate((1, 1, 2, 8)):
        cfg = copy.deepcopy(ACCEPT_CFG)
        cfg["workers"] = workers
        cfg_path = tmp_path / f"sim{i}.json"
        cfg_path.write_text(json.dumps(cfg))
        sim = tmp_path / f"sim{i}"
        assert cli_main(["simulate", "--config", str(cfg_path), "--out", str(sim)]) == 0
        fit = copy.deepcopy(cfg)
        fit["mode"] = "fit"
        fit["analysis"] = {"scans": [f"sim{i}/scans/scan*.csv"], "center_window_hz": 40.0}
        fit_path = tmp_path / f"fit{i}.json"
        fit_path.write_text(json.dumps(fit))
        assert cli_main(["fit", "--config", str(fit_path), "--out", str(tmp_path / f"fit{i}")]) == 0
        runs.append((data_outputs(sim), data_outputs(tmp_path / f"fit{i}")))
    same = all(r == runs[0] for r in runs[1:])
    n_files = sum(len(d) for d in runs[0])
    dt = time.perf_counter() - t0
    assert record(11, "byte-identical outputs", same,
                  f"{n_files} data files identical over 4 runs at workers 1, 1, 2, 8: {same} "
                  f"(manifest excluded: it records timings), {dt:.1f} s")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                pass
    print("\n".join(["", "acceptance summary:"] + RESULTS))
    sys.exit(0 if all(r.startswith("[PASS]") for r in RESULTS) else 1)
