"""
Training objectives and the optimizer loop.

Three objectives share one network:
    ctc         - negative log marginal over every alignment, all-mask input
    imputer_im  - cross-entropy against one rolled-in alignment (imitation)
    imputer_dp  - negative log marginal over alignments compatible with the
                  rolled-in partial alignment (forced-emission DP)
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np

from imputer.checkpoint import Checkpoint
from imputer.core_types import Alignment, PartialAlignment
from imputer.dataset import Example
from imputer.decoder import DecodeConfig, decode
from imputer.dp_engine import (
    LogProbLattice,
    ctc_forward_backward,
    constrained_viterbi,
    ctc_viterbi,
    forward_backward,
    lattice_gradient,
)
from imputer.errors import ConfigurationError, Infeasible, NumericFailure
from imputer.metrics import token_error_rate
from imputer.model import ModelConfig, ModelParams, backward, forward, log_parameter_summary
from imputer.optim import make_optimizer
from imputer.policies import RollinConfig, rollin
from imputer.utils import ordered_map, write_jsonl

Objective = Literal["ctc", "imputer_im", "imputer_dp"]
OBJECTIVES = ("ctc", "imputer_im", "imputer_dp")


@dataclass(frozen=True)
class TrainConfig:
    objective: Objective = "imputer_dp"
    rollin: RollinConfig = field(default_factory=RollinConfig)
    batch_size: int = 32
    learning_rate: float = 1e-3
    steps: int = 500
    seed: int = 0
    infeasible_policy: Literal["skip", "abort"] = "skip"
    optimizer: Literal["momentum", "adam"] = "momentum"
    momentum: float = 0.9
    imitation_scoring: Literal["masked", "all"] = "masked"
    eval_every: int = 100
    eval_size: int = 32
    log_every: int = 50
    workers: int = 1

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"Unknown objective: {self.objective}")
        if self.batch_size < 1 or self.steps < 0 or self.eval_size < 0:
            raise ConfigurationError("batch_size must be positive and steps, eval_size nonnegative")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"Learning rate must be positive, got {self.learning_rate}")
        if self.infeasible_policy not in ("skip", "abort"):
            raise ConfigurationError(f"Unknown infeasible policy: {self.infeasible_policy}")
        if self.imitation_scoring not in ("masked", "all"):
            raise ConfigurationError(f"Unknown imitation scoring: {self.imitation_scoring}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be positive, got {self.workers}")


@dataclass
class LossResult:
    loss: float
    grads: dict[str, np.ndarray]
    evaluated: int
    skipped: int
    per_example: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class _Job:
    example: Example
    partial: PartialAlignment
    target: Alignment | None
    dropout_seed: int | None


def _new_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**63))


def _ctc_term(params, job: _Job):
    lattice, cache = forward(
        params, job.example.features, job.partial, rng=_dropout_rng(job), return_cache=True
    )
    log_likelihood, posteriors = ctc_forward_backward(lattice, job.example.labels)
    return -log_likelihood, backward(params, cache, lattice_gradient(lattice, posteriors))


def _dp_term(params, job: _Job):
    lattice, cache = forward(
        params, job.example.features, job.partial, rng=_dropout_rng(job), return_cache=True
    )
    log_likelihood, posteriors = forward_backward(lattice, job.partial, job.target)
    return -log_likelihood, backward(params, cache, lattice_gradient(lattice, posteriors))


def imitation_term(
    lattice: LogProbLattice, partial: PartialAlignment, target: Alignment, scoring: str
):
    """Cross-entropy of target under the lattice and its gradient wrt the scores

    `masked` averages over the masked slots only; `all` sums over every slot,
    which is the literal log p(a | partial) that lower-bounds the DP marginal.
    """
    if scoring == "all":
        slots = np.arange(lattice.T)
    else:
        slots = np.asarray(partial.masked_slots, dtype=np.int64)
    grad = np.zeros((lattice.T, lattice.V))
    if not len(slots):
        return 0.0, grad
    targets = np.asarray(target.ids, dtype=np.int64)[slots]
    scale = 1.0 if scoring == "all" else 1.0 / len(slots)
    loss = -float(np.sum(lattice.values[slots, targets])) * scale
    grad[slots] = lattice.probs[slots]
    grad[slots, targets] -= 1.0
    return loss, grad * scale


def _im_term(params, job: _Job, scoring: str):
    lattice, cache = forward(
        params, job.example.features, job.partial, rng=_dropout_rng(job), return_cache=True
    )
    loss, grad = imitation_term(lattice, job.partial, job.target, scoring)
    if not grad.any():
        return loss, params.zeros_like()
    return loss, backward(params, cache, grad)


def _dropout_rng(job: _Job):
    return None if job.dropout_seed is None else np.random.default_rng(job.dropout_seed)


def _batch_loss(params, jobs, term, policy: str, workers: int, skipped: int) -> LossResult:
    def evaluate(job: _Job):
        try:
            return term(params, job)
        except Infeasible as err:
            if policy == "abort":
                raise
            logging.warning(f"Skipping infeasible example {job.example.id}: {err}")
            return None

    results = ordered_map(evaluate, jobs, workers)
    grads = params.zeros_like()
    losses = []
    # Reduce in batch order so the sum is independent of worker scheduling
    for result in results:
        if result is None:
            skipped += 1
            continue
        loss, example_grads = result
        losses.append(loss)
        for name, value in example_grads.items():
            grads[name] += value
    if not losses:
        raise Infeasible(f"All {skipped} examples in the batch are infeasible")
    for name in grads:
        grads[name] /= len(losses)
    return LossResult(float(np.mean(losses)), grads, len(losses), skipped, losses)


def loss_ctc(
    params: ModelParams,
    batch: list[Example],
    rng: np.random.Generator | None = None,
    *,
    policy: str = "skip",
    workers: int = 1,
) -> LossResult:
    """Mean CTC negative log-likelihood; dropout is active when rng is given"""
    vocab = params.config.vocab
    jobs, skipped = [], 0
    for example in batch:
        T = params.config.encoder_length(example.features.T)
        if len(example.labels) > T:
            if policy == "abort":
                raise Infeasible(
                    f"Example {example.id} has {len(example.labels)} labels for {T} slots"
                )
            logging.warning(f"Skipping infeasible example {example.id}")
            skipped += 1
            continue
        seed = None if rng is None else _new_seed(rng)
        jobs.append(_Job(example, PartialAlignment.all_masks(T, vocab), None, seed))
    if not jobs:
        raise Infeasible(f"All {skipped} examples in the batch are infeasible")
    return _batch_loss(params, jobs, _ctc_term, policy, workers, skipped)


def _rollin_jobs(params, batch, cfg: RollinConfig, rng, training: bool) -> list[_Job]:
    jobs = []
    for example in batch:
        if example.expert_alignment is None:
            raise ConfigurationError(f"Example {example.id} has no expert alignment")
        T = params.config.encoder_length(example.features.T)
        if len(example.expert_alignment) != T:
            raise ConfigurationError(
                f"Example {example.id}: expert alignment has {len(example.expert_alignment)} "
                f"slots but the encoder produces {T}; realign it with `imputer align`"
            )
        target, partial = rollin(example.expert_alignment, cfg, rng)
        seed = _new_seed(rng) if training else None
        jobs.append(_Job(example, partial, target, seed))
    return jobs


def loss_im(
    params: ModelParams,
    batch: list[Example],
    rollin_cfg: RollinConfig,
    rng: np.random.Generator,
    *,
    scoring: str = "masked",
    training: bool = False,
    policy: str = "skip",
    workers: int = 1,
) -> LossResult:
    jobs = _rollin_jobs(params, batch, rollin_cfg, rng, training)
    return _batch_loss(
        params, jobs, lambda p, job: _im_term(p, job, scoring), policy, workers, 0
    )


def loss_dp(
    params: ModelParams,
    batch: list[Example],
    rollin_cfg: RollinConfig,
    rng: np.random.Generator,
    *,
    training: bool = False,
    policy: str = "skip",
    workers: int = 1,
) -> LossResult:
    jobs = _rollin_jobs(params, batch, rollin_cfg, rng, training)
    return _batch_loss(params, jobs, _dp_term, policy, workers, 0)


def objective_loss(
    params: ModelParams,
    batch: list[Example],
    config: TrainConfig,
    rng: np.random.Generator,
    training: bool = True,
) -> LossResult:
    common = dict(policy=config.infeasible_policy, workers=config.workers)
    if config.objective == "ctc":
        return loss_ctc(params, batch, rng if training else None, **common)
    if config.objective == "imputer_im":
        return loss_im(
            params,
            batch,
            config.rollin,
            rng,
            scoring=config.imitation_scoring,
            training=training,
            **common,
        )
    return loss_dp(params, batch, config.rollin, rng, training=training, **common)


def evaluate_ter(
    params: ModelParams, examples: list[Example], decode_cfg: DecodeConfig, workers: int = 1
) -> float:
    if not examples:
        return 0.0
    hypotheses = ordered_map(
        lambda ex: decode(params, ex.features, decode_cfg)[0], examples, workers
    )
    return float(
        np.mean([token_error_rate(h.ids, ex.labels.ids) for h, ex in zip(hypotheses, examples)])
    )


def _gradient_norm(grads: dict[str, np.ndarray]) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.sqrt(sum(np.sum(np.square(g, dtype=np.float64)) for g in grads.values())))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[dict] = field(default_factory=list)


def train(
    config: TrainConfig,
    dataset: list[Example],
    model_config: ModelConfig,
    *,
    decode_cfg: DecodeConfig | None = None,
    eval_set: list[Example] | None = None,
    output_dir: Path | None = None,
    resume: Checkpoint | None = None,
) -> TrainResult:
    if not dataset:
        raise ConfigurationError("Training dataset is empty")
    decode_cfg = decode_cfg or DecodeConfig()
    eval_set = dataset[: config.eval_size] if eval_set is None else eval_set
    optimizer = make_optimizer(config.optimizer, config.learning_rate, config.momentum)

    if resume is not None:
        params = resume.params
        state = resume.optimizer_state
        if state is None or state.kind != optimizer.kind:
            state = optimizer.init_state(params)
            state.step = resume.step
        logging.info(f"Resuming from step {state.step}")
    else:
        params = ModelParams.initialize(model_config)
        state = optimizer.init_state(params)
    log_parameter_summary(params)

    metrics = []
    while state.step < config.steps:
        step = state.step + 1
        # Every step draws from its own stream so resumed runs replay exactly
        step_rng = np.random.default_rng([config.seed, step])
        size = min(config.batch_size, len(dataset))
        indices = step_rng.choice(len(dataset), size=size, replace=False)
        batch = [dataset[int(i)] for i in sorted(indices)]

        batch_ids = [ex.id for ex in batch][:5]
        try:
            result = objective_loss(params, batch, config, step_rng)
        except NumericFailure as err:
            raise NumericFailure(f"Step {step}: {err} (batch {batch_ids}...)") from err
        grad_norm = _gradient_norm(result.grads)
        if not np.isfinite(result.loss):
            raise NumericFailure(
                f"Non-finite loss {result.loss} at step {step} "
                f"(gradient norm {grad_norm:.3g}, batch {batch_ids}...)"
            )
        optimizer.update(params, result.grads, state)
        diverged = [name for name, value in params.items() if not np.isfinite(value).all()]
        if diverged:
            raise NumericFailure(
                f"Parameters {diverged[:3]} became non-finite at step {step} "
                f"(gradient norm {grad_norm:.3g}, learning rate {config.learning_rate:g})"
            )

        record = {
            "step": step,
            "objective": config.objective,
            "objective_value": result.loss,
            "skipped": result.skipped,
            "eval_ter": None,
        }
        if config.eval_every and (step % config.eval_every == 0 or step == config.steps):
            record["eval_ter"] = evaluate_ter(params, eval_set, decode_cfg, config.workers)
            logging.info(f"Step {step}: eval TER {record['eval_ter']:.4f}")
        metrics.append(record)

        logging.debug(f"Step {step}: loss {result.loss:.6f}, skipped {result.skipped}")
        if config.log_every and step % config.log_every == 0:
            logging.info(f"Step {step}/{config.steps}: {config.objective} loss {result.loss:.4f}")

    checkpoint = Checkpoint(
        params, state, extra={"objective": config.objective, "seed": config.seed}
    )
    if output_dir is not None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        checkpoint.save(output_dir / "model.ckpt")
        # A resumed run extends the existing log
        write_jsonl(output_dir / "metrics.jsonl", metrics, "a" if resume is not None else "w")
    return TrainResult(checkpoint, metrics)


def refinement_anchor(lattice: LogProbLattice, a: Alignment) -> PartialAlignment:
    """Pin the slots where the alignment agrees with the lattice argmax; mask the rest"""
    best = np.argmax(lattice.values, axis=1)
    ids = tuple(s if s == b else a.vocab.mask_id for s, b in zip(a.ids, best))
    return PartialAlignment(ids, a.vocab)


def extract_alignments(
    params: ModelParams, examples: list[Example], workers: int = 1, refine: bool = False
) -> list[Example]:
    """Replace expert alignments with the CTC model's best alignments

    With `refine`, an example that already carries an alignment of encoder length
    keeps the slots on which it agrees with the model's per-slot argmax, and only
    the remaining slots are realigned.
    """

    def align(example: Example) -> Example:
        T = params.config.encoder_length(example.features.T)
        partial = PartialAlignment.all_masks(T, params.config.vocab)
        lattice = forward(params, example.features, partial)
        expert = example.expert_alignment
        try:
            if refine and expert is not None and len(expert) == T:
                anchor = refinement_anchor(lattice, expert)
                best = constrained_viterbi(lattice, anchor, expert)
            else:
                best = ctc_viterbi(lattice, example.labels)
            return replace(example, expert_alignment=best)
        except Infeasible:
            logging.warning(f"Cannot align example {example.id}; keeping its previous alignment")
            return example

    return ordered_map(align, examples, workers)
