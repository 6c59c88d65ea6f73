from pathlib import Path

import pytest

from imputer.config import (
    RESOLVED_CONFIG,
    VERSION,
    load_run_config,
    parse_run_config,
    render_run_config,
    write_resolved_config,
)
from imputer.errors import ConfigurationError

""" Unit tests for run configuration files """

EXAMPLE = """
[model]
hidden = 8
heads = 2
layers = 1
ffn_dim = 16
vocab_size = 3
dtype = float64

[train]
objective = ctc
steps = 20
learning_rate = 0.01
optimizer = adam

[rollin]
shift_prob = 0.1
masking = bernoulli
p = 0.3

[decode]
block_size = 4
strategy = rightmost_last

[data]
train = data/train.jsonl

[run]
seed = 7
output_dir = runs/ctc
"""


def test_parse_run_config(tmp_path):
    config = parse_run_config(EXAMPLE, base_dir=tmp_path)
    assert config.model.hidden == 8
    assert config.model.dtype == "float64"
    assert config.train.objective == "ctc"
    assert config.train.steps == 20
    assert config.train.learning_rate == 0.01
    assert config.rollin.masking.kind == "bernoulli"
    assert config.rollin.masking.p == 0.3
    assert config.decode.strategy == "rightmost_last"
    assert config.decode.k is None
    assert config.train_data == (tmp_path / "data/train.jsonl").resolve()
    assert config.eval_data is None
    assert config.output_dir == (tmp_path / "runs/ctc").resolve()


def test_seed_flows_everywhere():
    config = parse_run_config(EXAMPLE)
    assert config.seed == 7
    assert config.model.seed == 7
    assert config.train.seed == 7
    assert config.rollin.seed == 7


def test_defaults(tmp_path):
    config = parse_run_config("", base_dir=tmp_path)
    assert config.train.objective == "imputer_dp"
    assert config.rollin.masking.kind == "block"
    assert config.output_dir == (tmp_path / "run").resolve()


@pytest.mark.parametrize(
    "text",
    [
        "[model]\nwidth = 3\n",
        "[optimizer]\nlr = 0.1\n",
        "[model]\nseed = 3\n",
        "[train]\nsteps = many\n",
        "[train]\nobjective = mle\n",
        "[rollin]\nmasking = stripes\n",
        "not an ini file",
    ],
)
def test_rejects_bad_config(text):
    with pytest.raises(ConfigurationError):
        parse_run_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_run_config(tmp_path / "missing.ini")


def test_resolved_config_round_trip(tmp_path):
    config = parse_run_config(EXAMPLE, base_dir=tmp_path)
    path = write_resolved_config(config, tmp_path / "out")
    assert path == tmp_path / "out" / RESOLVED_CONFIG
    text = path.read_text()
    assert f"version = {VERSION}" in text
    reloaded = load_run_config(path)
    assert reloaded == config
    assert render_run_config(reloaded) == text


def test_version_mismatch_only_warns(mocker):
    warning = mocker.patch("imputer.config.logging.warning")
    config = parse_run_config("[run]\nversion = 0.0.1\n", base_dir=Path("."))
    assert config.seed == 0
    warning.assert_called_once()
