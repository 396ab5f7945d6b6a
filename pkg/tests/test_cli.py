from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from striplab.cli import (
    EXIT_CONFIG,
    EXIT_FAILED,
    EXIT_INTEGRITY,
    EXIT_OK,
    ExperimentConfig,
    load_config,
    main,
    resolve_threads,
    task_seed,
)
from striplab.errors import ConfigurationError
from striplab.results import read_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

FREE_ENSEMBLE = {"family": "AndersonStrip", "width": 1, "potential": {"kind": "diagonal", "law": {"kind": "uniform", "params": [0, 0]}}}
WEAK_ENSEMBLE = {"family": "AndersonStrip", "width": 1, "potential": {"kind": "diagonal", "law": {"kind": "uniform", "params": [-1, 1]}}}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _free_lyapunov():
    return {"experiment": "lyapunov-spectrum", "seed": 0, "ensemble": FREE_ENSEMBLE, "energies": [3.0], "sizes": [2000], "replicas": 1}


def test_free_lyapunov_run_and_report(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(_write(tmp_path, _free_lyapunov())), "--out", str(out)]) == EXIT_OK
    rec = json.loads((out / "results.jsonl").read_text().splitlines()[0])
    assert rec["exponents"][0] == pytest.approx(0.962424, abs=1e-6)
    assert rec["schema_version"] == 1 and len(rec["config_hash"]) == 16
    manifest = json.loads((out / "manifest.json").read_text())
    names = {o["path"] for o in manifest["outputs"]}
    assert any(n.endswith(".csv") for n in names) and any(n.endswith(".svg") for n in names)
    capsys.readouterr()
    assert main(["report", str(out / "manifest.json")]) == EXIT_OK
    text = capsys.readouterr().out
    assert "0.962424" in text and "-0.962424" in text
    assert "symmetry" in text and "verdict: PASS" in text


def test_run_is_deterministic_across_threads(tmp_path):
    cfg = _write(tmp_path, {"experiment": "wegner", "seed": 5, "ensemble": WEAK_ENSEMBLE, "energies": [0.0, 0.3],
                            "sizes": [5, 10], "replicas": 30, "epsilon": 0.1})
    assert main(["run", str(cfg), "--out", str(tmp_path / "a"), "--threads", "1"]) in (EXIT_OK, EXIT_FAILED)
    assert main(["run", str(cfg), "--out", str(tmp_path / "b"), "--threads", "4"]) in (EXIT_OK, EXIT_FAILED)
    a = (tmp_path / "a" / "results.jsonl").read_bytes()
    b = (tmp_path / "b" / "results.jsonl").read_bytes()
    assert a == b and a
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["task_seeds"] == mb["task_seeds"]
    assert ma["outputs"] == mb["outputs"]


def test_env_thread_fallback(monkeypatch):
    monkeypatch.setenv("STRIPLAB_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.setenv("STRIPLAB_THREADS", "many")
    with pytest.raises(ConfigurationError):
        resolve_threads(None)
    monkeypatch.delenv("STRIPLAB_THREADS")
    assert resolve_threads(None) == 1


def test_task_seeds_depend_on_index_only():
    assert task_seed(1, 0) == task_seed(1, 0)
    assert len({task_seed(1, i) for i in range(100)}) == 100


def test_tampered_line_is_named(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = {**_free_lyapunov(), "energies": [3.0, 3.5]}
    main(["run", str(_write(tmp_path, cfg)), "--out", str(out)])
    path = out / "results.jsonl"
    lines = path.read_text().splitlines()
    lines[1] = lines[1].replace('"N":2000', '"N":2001')
    path.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["report", str(out / "manifest.json")]) == EXIT_INTEGRITY
    assert "line 2" in capsys.readouterr().err


def test_tampered_table_detected(tmp_path):
    out = tmp_path / "out"
    main(["run", str(_write(tmp_path, _free_lyapunov())), "--out", str(out)])
    csv_path = next(out.glob("*.csv"))
    csv_path.write_text(csv_path.read_text() + "x\r\n")
    assert main(["report", str(out / "manifest.json")]) == EXIT_INTEGRITY


def test_empty_results_give_no_records_verdict(tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", str(_write(tmp_path, _free_lyapunov())), "--out", str(out)])
    (out / "results.jsonl").write_text("")
    capsys.readouterr()
    assert main(["report", str(out / "manifest.json")]) == EXIT_FAILED
    assert "no records" in capsys.readouterr().out


def test_missing_manifest_is_integrity_error(tmp_path):
    assert main(["report", str(tmp_path / "nope.json")]) == EXIT_INTEGRITY


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda c: c.pop("seed"), "seed"),
        (lambda c: c.update(replicas=0), "replicas"),
        (lambda c: c.update(sizes=[10, 5]), "sizes"),
        (lambda c: c.update(bogus=1), "bogus"),
        (lambda c: c.update(experiment="nope"), "experiment"),
        (lambda c: c["ensemble"].update(width=0), "ensemble"),
        (lambda c: c.update(tolerances={"nonsense": 1}), "tolerances"),
        (lambda c: c.update(energies={"lo": 0, "hi": 1}), "points"),
    ],
)
def test_field_level_validation(mutate, needle, tmp_path, capsys):
    cfg = json.loads(json.dumps(_free_lyapunov()))
    mutate(cfg)
    assert main(["run", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_tau_not_below_gamma_rejected_before_computation(tmp_path, capsys):
    cfg = {"experiment": "resonance-map", "seed": 0, "ensemble": WEAK_ENSEMBLE, "energies": [0.0], "sizes": [4],
           "replicas": 2, "tau": 0.6, "gammaW": 0.5}
    out = tmp_path / "o"
    assert main(["run", str(_write(tmp_path, cfg)), "--out", str(out)]) == EXIT_CONFIG
    assert "tau" in capsys.readouterr().err
    assert not (out / "results.jsonl").exists()


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    assert main(["run", str(p)]) == EXIT_CONFIG


def test_config_hash_ignores_output_dir():
    a = ExperimentConfig.from_dict({**_free_lyapunov(), "output_dir": "x"})
    b = ExperimentConfig.from_dict({**_free_lyapunov(), "output_dir": "y"})
    c = ExperimentConfig.from_dict({**_free_lyapunov(), "seed": 1})
    assert a.config_hash == b.config_hash != c.config_hash


def test_energy_grid_forms():
    base = _free_lyapunov()
    assert ExperimentConfig.from_dict({**base, "energies": 1.5}).energies == [1.5]
    assert ExperimentConfig.from_dict({**base, "energies": {"values": [1, 2]}}).energies == [1.0, 2.0]
    grid = ExperimentConfig.from_dict({**base, "energies": {"lo": -1, "hi": 1, "points": 5}}).energies
    np.testing.assert_allclose(grid, [-1, -0.5, 0, 0.5, 1])


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_bundled_configs_validate(path):
    cfg = load_config(path)
    assert cfg.experiment == path.stem


def test_green_oracle_run_writes_log_plot(tmp_path):
    cfg = {"experiment": "green-oracle", "seed": 2, "energies": [0.3], "sizes": [2, 4], "replicas": 3,
           "ensemble": {"family": "RandomHopping", "width": 2, "potential": {"kind": "goe", "scale": 1.0},
                        "hopping": {"kind": "identity_plus_perturbation", "delta": 0.5}}}
    out = tmp_path / "o"
    assert main(["run", str(_write(tmp_path, cfg)), "--out", str(out)]) == EXIT_OK
    header, rows = read_csv(next(out.glob("*.csv")))
    # one row per (energy, size), holding the worst mismatch over replicas
    assert len(rows) == 2 and header[:2] == ["E", "N"]
    assert "log scale" in next(out.glob("*.svg")).read_text()


def test_task_errors_recorded_and_run_continues(tmp_path):
    # E = 1 = 2 cos(pi / 3) is an eigenvalue of the free box [-2, 2]: only that task fails
    cfg = {"experiment": "green-oracle", "seed": 0, "ensemble": FREE_ENSEMBLE, "energies": [1.0, 0.5], "sizes": [2],
           "replicas": 1}
    out = tmp_path / "o"
    code = main(["run", str(_write(tmp_path, cfg)), "--out", str(out)])
    recs = [json.loads(line) for line in (out / "results.jsonl").read_text().splitlines()]
    kinds = [r["kind"] for r in recs]
    assert kinds == ["task_error", "green_oracle"]
    assert "NearSingularError" in recs[0]["error"]
    assert code == EXIT_FAILED


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, _free_lyapunov())
    proc = subprocess.run(
        [sys.executable, "-m", "striplab.cli", "run", str(cfg), "--out", str(tmp_path / "o"), "--log", "INFO"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == EXIT_OK, proc.stderr
    assert "[PASS]" in proc.stdout
