import copy
import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from isbsim.cli import EXIT_CONFIG, EXIT_OK, main

TUBE_2D = {
    "mode": "simulate",
    "engine": "closed_form",
    "seed": 3,
    "workers": 1,
    "grid": {"min_hz": -300.0, "max_hz": -40.0, "step_hz": 2.0},
    "physics": {
        "trap": {"omega_x_hz": 110000.0, "omega_y_hz": 70000.0, "omega_z_hz": 800.0,
                 "eta_z": 0.07},
        "thermal": {"temp_uk": 4.5},
        "drive": {"rabi_hz": 6.25, "pulse_area": 1.0},
        "interaction": {"a_eg_minus_a0": -280.0},
    },
}


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_simulate_closed_form(tmp_path):
    cfg = write_config(tmp_path / "c.json", TUBE_2D)
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == EXIT_OK
    header, data = read_csv(out / "spectrum.csv")
    assert header == ["detuning_hz", "excitation_fraction", "sigma"]
    assert np.all(np.diff(data[:, 0]) > 0)
    assert data[0, 0] == -300.0 and data[-1, 0] == -40.0 and data.shape[0] == 131
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["outputs"] == ["spectrum.csv"]


def test_fit_round_trip(tmp_path):
    sim = copy.deepcopy(TUBE_2D)
    sim["synthetic_scans"] = {"n_scans": 20, "span_hz": 300.0, "step_hz": 2.0, "noise": 0.01}
    assert main(["simulate", "--config", write_config(tmp_path / "s.json", sim),
                 "--out", str(tmp_path / "sim")]) == EXIT_OK
    assert len(list((tmp_path / "sim" / "scans").glob("scan*.csv"))) == 20
    fit = copy.deepcopy(TUBE_2D)
    fit["mode"] = "fit"
    fit["physics"]["interaction"]["a_eg_minus_a0"] = -100.0
    fit["analysis"] = {"scans": ["sim/scans/scan*.csv"], "bin_width_hz": 2.0}
    assert main(["fit", "--config", write_config(tmp_path / "f.json", fit),
                 "--out", str(tmp_path / "fit")]) == EXIT_OK
    result = json.loads((tmp_path / "fit" / "fit_result.json").read_text())
    a = result["parameters"]["a_eg_minus_a0"]["value"]
    assert abs(a / -280.0 - 1) < 0.05


def test_invalid_config_writes_nothing(tmp_path, capsys):
    bad = copy.deepcopy(TUBE_2D)
    bad["physics"]["trap"]["omega_z_hz"] = -800.0
    out = tmp_path / "out"
    assert main(["simulate", "--config", write_config(tmp_path / "b.json", bad),
                 "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == EXIT_CONFIG


def validate(tmp_path, cfg, capsys):
    code = main(["validate", "--config", write_config(tmp_path / "v.json", cfg)])
    return code, json.loads(capsys.readouterr().out)


def test_validate_examples(tmp_path, capsys):
    code, report = validate(tmp_path, TUBE_2D, capsys)
    assert code == EXIT_OK and report["violations"] == []
    cold = copy.deepcopy(TUBE_2D)
    cold["physics"]["thermal"] = {"temp_uk": 4.5, "temp_z_uk": 0.1}
    code, report = validate(tmp_path, cold, capsys)
    assert code == EXIT_OK and any("k_B T_Z >> hbar omega_Z fails" in w
                                   for w in report["warnings"])
    wide = copy.deepcopy(TUBE_2D)
    wide["grid"]["step_hz"] = 500.0
    code, report = validate(tmp_path, wide, capsys)
    assert code == EXIT_CONFIG and report["violations"]


def data_files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "manifest.json"}


@pytest.mark.parametrize("engine", ["ensemble", "brute_force"])
def test_outputs_byte_identical(tmp_path, engine):
    cfg = copy.deepcopy(TUBE_2D)
    cfg["engine"] = engine
    cfg["physics"]["lattice"] = {"n_samples": 48}
    cfg["synthetic_scans"] = {"n_scans": 4, "noise": 0.02, "drift_hz": 2.0}
    runs = []
    for i, workers in enumerate([1, 1, 4]):
        cfg["workers"] = workers
        out = tmp_path / f"run{i}"
        assert main(["simulate", "--config", write_config(tmp_path / f"c{i}.json", cfg),
                     "--out", str(out)]) == EXIT_OK
        runs.append(data_files(out))
    assert runs[0] == runs[1] == runs[2]
    assert "spectrum.csv" in runs[0] and len(runs[0]) == 5


def test_seed_override_changes_scans(tmp_path):
    cfg = copy.deepcopy(TUBE_2D)
    cfg["synthetic_scans"] = {"n_scans": 2, "noise": 0.02}
    path = write_config(tmp_path / "c.json", cfg)
    main(["simulate", "--config", path, "--out", str(tmp_path / "a")])
    main(["simulate", "--config", path, "--out", str(tmp_path / "b"), "--seed", "4"])
    a, b = data_files(tmp_path / "a"), data_files(tmp_path / "b")
    assert a["spectrum.csv"] == b["spectrum.csv"]
    assert a["scans/scan000.csv"] != b["scans/scan000.csv"]


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path / "c.json", TUBE_2D)
    proc = subprocess.run([sys.executable, "-m", "isbsim", "validate", "--config", cfg],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["violations"] == []
