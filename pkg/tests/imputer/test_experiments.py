import numpy as np
import pytest

from imputer import experiments, main
from imputer.dataset import SyntheticSpec
from imputer.experiments import (
    EXPERIMENTS,
    SweepRunner,
    SweepSettings,
    block_size_sweep,
    finite_losses,
    loss_decrease,
    objective_ordering,
    run_experiments,
    topk_parity,
)
from imputer.trainer import TrainConfig

""" Tests for the training sweeps; the full-size orderings are marked slow """


@pytest.fixture
def tiny_settings(tiny_config):
    yield SweepSettings(
        seeds=(0, 1),
        data=SyntheticSpec(
            num_examples=8, vocab_size=2, min_length=1, max_length=3, feature_dim=3
        ),
        eval_examples=4,
        model=tiny_config,
        train=TrainConfig(batch_size=4, steps=3, eval_every=0, optimizer="adam"),
        block_size=2,
    )


@pytest.fixture
def runner(tiny_settings):
    yield SweepRunner(tiny_settings)


@pytest.fixture(scope="module")
def full_runner():
    """Full-size models, shared by every slow test in this module"""
    yield SweepRunner(SweepSettings())


def test_split_shares_one_draw(runner):
    train_set, held_out = runner.split("multimodal", 0)
    assert len(train_set) == 8
    assert len(held_out) == 4
    assert not {ex.id for ex in train_set} & {ex.id for ex in held_out}
    assert runner.split("multimodal", 0) is runner.split("multimodal", 0)


def test_models_are_trained_once(runner, mocker):
    spy = mocker.spy(runner, "run")
    train = mocker.spy(experiments, "train")
    loss_decrease(runner)
    finite_losses(runner)
    assert spy.call_count == 4
    assert train.call_count == 2


def test_runs_follow_settings(runner, tiny_settings):
    result = runner.run("unimodal", "ctc", 1)
    assert result.checkpoint.step == tiny_settings.train.steps
    assert result.checkpoint.params.config.seed == 1
    assert result.checkpoint.params.config.vocab_size == tiny_settings.data.vocab_size
    assert all(m["objective"] == "ctc" for m in result.metrics)


@pytest.mark.parametrize(
    "experiment",
    [loss_decrease, finite_losses, objective_ordering, block_size_sweep, topk_parity],
)
def test_experiment_reports(runner, experiment):
    passed, detail = experiment(runner)
    assert isinstance(passed, bool)
    assert detail


def test_finite_losses_counts_every_step(runner):
    passed, detail = finite_losses(runner)
    assert passed
    assert detail == "0 non-finite losses over 6 steps"


def test_block_size_sweep_includes_trained_size(runner):
    detail = block_size_sweep(runner)[1]
    assert all(f"B={B}:" in detail for B in (2, 4, 8, 16))


def test_run_experiments_reports_errors(tiny_settings, mocker):
    mocker.patch.dict(
        "imputer.experiments.EXPERIMENTS", {"loss_decrease": mocker.Mock(side_effect=ValueError)}
    )
    (result,) = run_experiments(tiny_settings, ["loss_decrease"])
    assert not result.passed
    assert "ValueError" in result.detail


def test_experiment_command(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    main(
        [
            "experiment",
            "--name",
            "finite_losses",
            "--seeds",
            "1",
            "--steps",
            "2",
            "--num-examples",
            "4",
            "--eval-examples",
            "2",
        ]
    )
    assert "PASS finite_losses" in capsys.readouterr().out


def test_experiment_command_failure(tmp_path, monkeypatch, mocker):
    monkeypatch.chdir(tmp_path)
    mocker.patch.dict(
        "imputer.experiments.EXPERIMENTS", {"topk_parity": lambda runner: (False, "off")}
    )
    with pytest.raises(SystemExit) as e:
        main(["experiment", "--name", "topk_parity"])
    assert e.value.code == 1


def test_experiment_names():
    assert list(EXPERIMENTS) == [
        "loss_decrease",
        "finite_losses",
        "objective_ordering",
        "block_size_sweep",
        "topk_parity",
    ]


@pytest.mark.slow
@pytest.mark.parametrize("name", list(EXPERIMENTS))
def test_full_size_orderings(full_runner, name):
    passed, detail = EXPERIMENTS[name](full_runner)
    assert passed, detail


@pytest.mark.slow
def test_full_size_losses_are_finite(full_runner):
    for seed in full_runner.settings.seeds:
        metrics = full_runner.run("unimodal", "imputer_dp", seed).metrics
        losses = [m["objective_value"] for m in metrics]
        assert len(losses) == 500
        assert np.isfinite(losses).all()
