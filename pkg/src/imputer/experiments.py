"""
Short training sweeps on the synthetic tasks that check how the objectives and
decoders compare once trained. Each experiment trains small models for a few
seeds, decodes a held-out split and compares medians across seeds.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from imputer.dataset import Example, SyntheticSpec, Task, gen_synthetic
from imputer.decoder import DecodeConfig, decode
from imputer.metrics import EvalReport, evaluate, token_error_rate
from imputer.model import ModelConfig, ModelParams
from imputer.selfcheck import SuiteResult
from imputer.trainer import TrainConfig, TrainResult, train
from imputer.utils import ordered_map

SWEEP_BLOCK_SIZES = (2, 4, 8, 16)
TOPK_PARITY_FLOOR = 0.02


def _default_train() -> TrainConfig:
    return TrainConfig(optimizer="adam", learning_rate=3e-3, eval_every=0, log_every=100)


@dataclass(frozen=True)
class SweepSettings:
    seeds: tuple[int, ...] = (0, 1, 2)
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    eval_examples: int = 200
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=_default_train)
    block_size: int = 8
    workers: int = 1


class SweepRunner:
    """Trains each (task, objective, seed) model once and shares it between experiments"""

    def __init__(self, settings: SweepSettings):
        self.settings = settings
        self._splits: dict[tuple[Task, int], tuple[list[Example], list[Example]]] = {}
        self._runs: dict[tuple[Task, str, int], TrainResult] = {}

    def split(self, task: Task, seed: int) -> tuple[list[Example], list[Example]]:
        key = (task, seed)
        if key not in self._splits:
            held_out = self.settings.eval_examples
            spec = replace(
                self.settings.data, num_examples=self.settings.data.num_examples + held_out
            )
            # One draw so both splits share the symbol embeddings
            examples = gen_synthetic(task, spec, np.random.default_rng([seed, 1]))
            self._splits[key] = (examples[held_out:], examples[:held_out])
        return self._splits[key]

    def run(self, task: Task, objective: str, seed: int) -> TrainResult:
        key = (task, objective, seed)
        if key not in self._runs:
            settings = self.settings
            model_config = replace(
                settings.model,
                feature_dim=settings.data.feature_dim,
                vocab_size=settings.data.vocab_size,
                seed=seed,
            )
            rollin = settings.train.rollin
            masking = replace(rollin.masking, block_size=settings.block_size)
            config = replace(
                settings.train,
                objective=objective,
                rollin=replace(rollin, masking=masking),
                seed=seed,
                workers=settings.workers,
            )
            logging.info(f"Training {objective} on {task} data with seed {seed}")
            self._runs[key] = train(config, self.split(task, seed)[0], model_config)
        return self._runs[key]

    def params(self, task: Task, objective: str, seed: int) -> ModelParams:
        return self.run(task, objective, seed).checkpoint.params

    def hypotheses(
        self, params: ModelParams, examples: list[Example], cfg: DecodeConfig
    ) -> list[tuple[int, ...]]:
        decoded = ordered_map(
            lambda ex: decode(params, ex.features, cfg)[0], examples, self.settings.workers
        )
        return [hypothesis.ids for hypothesis in decoded]

    def report(self, task: Task, objective: str, seed: int, cfg: DecodeConfig) -> EvalReport:
        examples = self.split(task, seed)[1]
        hyps = self.hypotheses(self.params(task, objective, seed), examples, cfg)
        modes = None
        if all(ex.modes is not None for ex in examples):
            modes = {ex.id: tuple(mode.ids for mode in ex.modes) for ex in examples}
        return evaluate(
            {ex.id: hyp for ex, hyp in zip(examples, hyps)},
            {ex.id: ex.labels.ids for ex in examples},
            modes,
        )


def _median(values) -> float:
    return float(np.median(list(values)))


def _losses(result: TrainResult) -> np.ndarray:
    return np.array([record["objective_value"] for record in result.metrics], dtype=np.float64)


def loss_decrease(runner: SweepRunner) -> tuple[bool, str]:
    """The imputer_dp loss on the unimodal task ends lower than it starts"""
    drops = []
    for seed in runner.settings.seeds:
        losses = _losses(runner.run("unimodal", "imputer_dp", seed))
        window = max(1, len(losses) // 10)
        drops.append(float(losses[:window].mean() - losses[-window:].mean()))
    median = _median(drops)
    return median > 0, f"median loss drop {median:.4f} over seeds (per seed {np.round(drops, 4)})"


def finite_losses(runner: SweepRunner) -> tuple[bool, str]:
    """Every imputer_dp step on the unimodal task reports a finite loss"""
    steps = 0
    bad = 0
    for seed in runner.settings.seeds:
        losses = _losses(runner.run("unimodal", "imputer_dp", seed))
        steps += len(losses)
        bad += int((~np.isfinite(losses)).sum())
    expected = runner.settings.train.steps * len(runner.settings.seeds)
    return bad == 0 and steps == expected, f"{bad} non-finite losses over {steps} steps"


def objective_ordering(runner: SweepRunner) -> tuple[bool, str]:
    """On the multimodal task imputer_dp beats CTC on TER and mode consistency, and ties or
    beats imputer_im on TER"""
    # CTC reads every slot off the all-mask lattice, which is block decoding with B=1
    decoders = {
        "ctc": DecodeConfig(block_size=1),
        "imputer_im": DecodeConfig(block_size=runner.settings.block_size),
        "imputer_dp": DecodeConfig(block_size=runner.settings.block_size),
    }
    ter = {}
    consistency = {}
    for objective, cfg in decoders.items():
        reports = [
            runner.report("multimodal", objective, seed, cfg) for seed in runner.settings.seeds
        ]
        ter[objective] = _median(r.mean_ter for r in reports)
        consistency[objective] = _median(r.mode_consistency for r in reports)
    passed = (
        ter["imputer_dp"] < ter["ctc"]
        and consistency["imputer_dp"] > consistency["ctc"]
        and ter["imputer_dp"] <= ter["imputer_im"]
    )
    detail = "; ".join(
        f"{name}: TER {ter[name]:.4f}, consistency {consistency[name]:.4f}" for name in decoders
    )
    return passed, detail


def block_size_sweep(runner: SweepRunner) -> tuple[bool, str]:
    """Decoding a B-trained model with rightmost_last is worse at B=2 than at the trained size"""
    trained = runner.settings.block_size
    ter = {}
    for B in sorted({*SWEEP_BLOCK_SIZES, trained}):
        cfg = DecodeConfig(block_size=B, strategy="rightmost_last")
        ter[B] = _median(
            runner.report("multimodal", "imputer_dp", seed, cfg).mean_ter
            for seed in runner.settings.seeds
        )
    detail = ", ".join(f"B={B}: {value:.4f}" for B, value in ter.items())
    return ter[2] > ter[trained], f"median TER {detail}"


def topk_parity(runner: SweepRunner) -> tuple[bool, str]:
    """Top-k with k=ceil(T/B) lands within noise of block decoding at block size B"""
    block = DecodeConfig(block_size=runner.settings.block_size)
    topk = replace(block, strategy="topk")
    differences = []
    for seed in runner.settings.seeds:
        params = runner.params("multimodal", "imputer_dp", seed)
        examples = runner.split("multimodal", seed)[1]
        by_block = runner.hypotheses(params, examples, block)
        by_topk = runner.hypotheses(params, examples, topk)
        differences.extend(
            token_error_rate(k_hyp, ex.labels.ids) - token_error_rate(b_hyp, ex.labels.ids)
            for ex, b_hyp, k_hyp in zip(examples, by_block, by_topk)
        )
    differences = np.asarray(differences, dtype=np.float64)
    if differences.size == 0:
        return True, "no held-out examples"
    mean = float(differences.mean())
    stderr = float(differences.std() / np.sqrt(differences.size))
    tolerance = max(TOPK_PARITY_FLOOR, 2 * stderr)
    return abs(mean) <= tolerance, (
        f"mean TER difference (top-k minus block) {mean:+.4f}, tolerance {tolerance:.4f}"
    )


EXPERIMENTS: dict[str, Callable[[SweepRunner], tuple[bool, str]]] = {
    "loss_decrease": loss_decrease,
    "finite_losses": finite_losses,
    "objective_ordering": objective_ordering,
    "block_size_sweep": block_size_sweep,
    "topk_parity": topk_parity,
}


def run_experiments(
    settings: SweepSettings | None = None, names: list[str] | None = None
) -> list[SuiteResult]:
    """Run the named experiments (all by default), training each model at most once"""
    runner = SweepRunner(settings or SweepSettings())
    results = []
    for name in names or EXPERIMENTS:
        started = time.perf_counter()
        try:
            passed, detail = EXPERIMENTS[name](runner)
        except Exception as err:
            passed, detail = False, f"raised {err.__class__.__name__}: {err}"
        result = SuiteResult(name, bool(passed), detail, time.perf_counter() - started)
        (logging.info if result.passed else logging.error)(str(result))
        results.append(result)
    return results
