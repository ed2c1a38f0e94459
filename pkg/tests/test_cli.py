import json
import struct
from pathlib import Path

import numpy as np
import pytest

from kelab.cli import main
from kelab.io import read_csv, read_field

SMALL = """\
model:
  N: 32
family:
  M: 4
poles:
  centers: [[0.5, 0.5]]
  exponents: [{a}]
analysis:
  K_grid: [1, 2, 3]
  capacity_K: [2]
  random_candidates: 5
  continuity_tol: 1.0
output: {out}
seed: 3
"""


def write_cfg(tmp_path, a=-0.5, out="run", name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(SMALL.format(a=a, out=out))
    return p


def payload(run_dir):
    run_dir = Path(run_dir)
    return {str(p.relative_to(run_dir)): p.read_bytes() for p in sorted(run_dir.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(tmp)
    code = main(["run", str(cfg), "--out", str(tmp / "a")])
    return tmp, cfg, code


def test_run_writes_artifacts(small_run, capsys):
    tmp, _, code = small_run
    assert code in (0, 1)
    out = tmp / "a"
    for name in ("summary.json", "manifest.json", "config.yaml", "fibers.csv", "decay.csv",
                 "capacity.csv", "barrier.csv", "wp.csv", "localized.csv", "fields/phi_00.bin"):
        assert (out / name).is_file(), name
    summary = json.loads((out / "summary.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == summary["config_hash"]
    assert {f["path"] for f in manifest["files"]} >= {"wp.csv", "fields/phi_00.bin"}
    assert "timing" in manifest and "timing" not in summary
    header, values = read_field(out / "fields/phi_00.bin")
    assert header.dims == (32, 32) and np.all(np.isfinite(values))
    cols, rows = read_csv(out / "wp.csv")
    assert cols[:4] == ["t", "A_0", "A_1", "psi_wp"] and len(rows) == 6


def test_rerun_is_byte_identical(small_run):
    tmp, cfg, code = small_run
    assert main(["run", str(cfg), "--out", str(tmp / "b")]) == code
    assert payload(tmp / "a") == payload(tmp / "b")


def test_threads_do_not_change_outputs(small_run):
    tmp, cfg, code = small_run
    assert main(["run", str(cfg), "--out", str(tmp / "c"), "--threads", "3"]) == code
    assert payload(tmp / "a") == payload(tmp / "c")


def test_report_idempotent(small_run, capsys):
    tmp, _, _ = small_run
    assert main(["report", str(tmp / "a")]) == 0
    first = payload(tmp / "a" / "report")
    assert set(first) == {"decay_plot.csv", "psi_wp_plot.csv", "c_eps_plot.csv",
                          "diagnostics_plot.csv", "summary.json"}
    assert main(["report", str(tmp / "a")]) == 0
    assert payload(tmp / "a" / "report") == first


def test_identity_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path, a=0.0)
    assert main(["run", str(cfg), "--out", str(tmp_path / "id")]) == 0
    for path in sorted((tmp_path / "id" / "fields").glob("*.bin")):
        assert np.max(np.abs(read_field(path)[1])) < 1e-12
    cols, rows = read_csv(tmp_path / "id" / "wp.csv")
    assert max(abs(r[cols.index("psi_wp")]) for r in rows) < 1e-12


def test_output_root_env(tmp_path, monkeypatch, capsys):
    cfg = write_cfg(tmp_path, a=0.0, out="nested/run")
    monkeypatch.setenv("KELAB_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "root" / "nested" / "run" / "summary.json").is_file()


def test_malformed_config_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("model:\n  n: 1\n  N: 4\n")
    assert main(["run", str(p), "--out", str(tmp_path / "x")]) == 2
    assert "line 3" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_annulus_run_rejected(tmp_path, capsys):
    p = tmp_path / "ann.yaml"
    p.write_text("model:\n  chart: annulus\n  N: 32\n")
    assert main(["run", str(p), "--out", str(tmp_path / "x")]) == 2


def test_missing_config_and_bad_threads(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.yaml")]) == 2
    cfg = write_cfg(tmp_path)
    assert main(["run", str(cfg), "--threads", "0"]) == 2


def test_report_on_empty_dir(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 2
    assert "summary.json" in capsys.readouterr().err


def test_oracle_check(capsys):
    assert main(["oracle-check", "--levels", "32", "64"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["passed"] and 1.8 <= out["order"] <= 2.2


def test_verify_writes_report(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    code = main(["verify", str(cfg), "--out", str(tmp_path / "v")])
    report = json.loads((tmp_path / "v" / "verify.json").read_text())
    names = {c["name"] for c in report["checks"]}
    assert {"identity_density", "brute_force_16x16", "max_principle_bracket",
            "comparison_monotonicity", "annulus_oracle_order", "conservation"} <= names
    assert code == (0 if report["passed"] else 1)
    assert "[PASS] brute_force_16x16" in capsys.readouterr().out


def test_shipped_configs_parse():
    from kelab.config import load_config
    root = Path(__file__).resolve().parents[1] / "configs"
    for path in sorted(root.glob("*.yaml")):
        load_config(path)
