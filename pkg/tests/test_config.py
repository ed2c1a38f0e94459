import pytest

from kelab.config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config

FULL = """\
model:
  chart: torus
  n: 1
  tau: [0.0, 1.0]
  N: 64
  form: model_fs
family:
  t_max: 0.5
  ratio: 0.5
  M: 6
poles:
  centers: [[0.5, 0.5]]
  exponents: [-0.5]
solver:
  tol: 1e-9
  ladder: [16, 32]
analysis:
  K_grid: [1, 2, 3]
  refine_N: 128
output: runs/demo
seed: 4
"""


def test_defaults():
    cfg = parse_config("{}")
    assert cfg == ExperimentConfig()
    assert cfg.family.M == 14 and cfg.model.N == 128


def test_full_parse():
    cfg = parse_config(FULL)
    assert cfg.model.N == 64 and cfg.model.form == "model_fs"
    assert cfg.solver.tol == 1e-9 and cfg.solver.ladder == (16, 32)
    assert cfg.analysis.K_grid == (1.0, 2.0, 3.0)
    assert cfg.poles.centers == ((0.5, 0.5),)


def test_roundtrip():
    cfg = parse_config(FULL)
    again = parse_config(dump_config(cfg))
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)
    assert again.hash == cfg.hash


def test_hash_tracks_content():
    assert parse_config(FULL).hash != parse_config(FULL.replace("seed: 4", "seed: 5")).hash


@pytest.mark.parametrize("text, line, match", [
    ("model:\n  chart: torus\n  N: 8\n", 3, "model.N must be >= 16"),
    ("model:\n  n: 1\nfamly:\n  M: 3\n", 3, "unknown"),
    ("family:\n  ratio: 1.5\n", 2, "ratio"),
    ("poles:\n  centers: [[0.5, 0.5]]\n  exponents: [-1.0]\n", 3, "exponent"),
    ("solver:\n  preconditioner: ilu\n", 2, "preconditioner"),
    ("analysis:\n  K_grid: [2, 1]\n", 2, "ascending"),
    ("model:\n  N: 64\n  N: 32\n", 3, "duplicate"),
    ("analysis:\n  eps: [0.05]\n  delta: [0.05]\n", 3, "eps > n\\*delta"),
])
def test_line_anchored_errors(text, line, match):
    with pytest.raises(ConfigError, match=match) as err:
        parse_config(text)
    assert err.value.line == line
    assert str(err.value).startswith(f"line {line}:")


def test_yaml_syntax_error():
    with pytest.raises(ConfigError) as err:
        parse_config("model: [unclosed\n")
    assert err.value.line is not None


def test_load_from_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(FULL)
    assert load_config(p) == parse_config(FULL)
