"""
Self-verification suites: the dynamic programs against the brute-force oracle,
the compatible-alignment count, reduction identities, the imitation lower
bound, finite-difference gradient checks and the decoder contracts.
"""

import logging
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from imputer.core_types import Alignment, BlockSpec, PartialAlignment, Vocab, collapse
from imputer.decoder import DecodeConfig, block_decode, topk_decode
from imputer.dp_engine import (
    LogProbLattice,
    constrained_forward,
    count_compatible,
    ctc_forward,
    forward_backward,
    lattice_gradient,
    repetition_constant,
)
from imputer.model import FeatureSeq, ModelConfig, ModelParams, backward, forward
from imputer.oracle import brute_constrained, brute_marginal, enumerate_compatible
from imputer.policies import (
    MaskingPolicy,
    RollinConfig,
    apply_masking,
    mask_bernoulli,
    rollin_alignment,
)

ORACLE_TOLERANCE = 1e-6
IDENTITY_TOLERANCE = 1e-9
LATTICE_GRADIENT_TOLERANCE = 1e-4
MODEL_GRADIENT_TOLERANCE = 1e-3
GRADIENT_SCALE_FLOOR = 1e-4

TINY_MODEL = ModelConfig(
    feature_dim=3,
    hidden=4,
    heads=2,
    layers=1,
    ffn_dim=6,
    kernel_width=3,
    vocab_size=2,
    dropout=0.0,
    dtype="float64",
)


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} ({self.seconds:.1f}s): {self.detail}"


def random_instance(
    rng: np.random.Generator, max_T: int = 10, max_labels: int = 5, max_vocab: int = 4
) -> tuple[LogProbLattice, Alignment, PartialAlignment]:
    """Random normalized lattice, alignment and compatible partial alignment"""
    vocab = Vocab.of_size(int(rng.integers(1, max_vocab + 1)))
    T = int(rng.integers(1, max_T + 1))
    m = int(rng.integers(0, min(max_labels, T) + 1))
    ids = np.full(T, vocab.blank_id)
    positions = rng.choice(T, size=m, replace=False)
    ids[positions] = rng.integers(1, len(vocab.tokens) + 1, size=m)
    a = Alignment(tuple(ids), vocab)
    lattice = LogProbLattice.from_scores(rng.normal(0.0, 2.0, size=(T, vocab.size)))
    return lattice, a, mask_bernoulli(a, float(rng.random()), rng)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute difference, relative to the largest gradient magnitude

    The scale is floored so that gradients that vanish analytically (such as
    attention key biases) are compared against round-off rather than zero.
    """
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), GRADIENT_SCALE_FLOOR)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_oracle(rng, count: int = 1000) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(count):
        lattice, a, partial = random_instance(rng)
        y = collapse(a)
        worst = max(
            worst,
            abs(ctc_forward(lattice, y) - brute_marginal(lattice, y).log_prob),
            abs(
                constrained_forward(lattice, partial, a)
                - brute_constrained(lattice, partial, a).log_prob
            ),
        )
    return worst <= ORACLE_TOLERANCE, f"max deviation {worst:.3g} over {count} instances"


def check_counting(rng, count: int = 1000) -> tuple[bool, str]:
    mismatches = above_count = run_local = 0
    for _ in range(count):
        _, a, partial = random_instance(rng)
        exact = count_compatible(partial, a)
        mismatches += exact != len(enumerate_compatible(partial, a))
        local = repetition_constant(partial, a)
        above_count += local > exact
        run_local += local == exact
    return mismatches == 0 and above_count == 0, (
        f"{mismatches} mismatches over {count} pairs; "
        f"run product exact on {run_local}, above the count on {above_count}"
    )


def check_reduction(rng, count: int = 100) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(count):
        lattice, a, _ = random_instance(rng)
        all_masks = PartialAlignment.all_masks(len(a), a.vocab)
        worst = max(
            worst,
            abs(constrained_forward(lattice, all_masks, a) - ctc_forward(lattice, collapse(a))),
            abs(
                constrained_forward(lattice, PartialAlignment.from_alignment(a), a)
                - lattice.path_score(a)
            ),
        )
    return worst <= IDENTITY_TOLERANCE, f"max deviation {worst:.3g} over {count} instances"


def check_lower_bound(rng, count: int = 1000) -> tuple[bool, str]:
    policies = [
        MaskingPolicy("bernoulli", p=0.5),
        MaskingPolicy("uniform"),
        MaskingPolicy("block", block_size=3),
    ]
    violations = 0
    for index in range(count):
        lattice, expert, _ = random_instance(rng)
        cfg = RollinConfig(shift_prob=0.2, masking=policies[index % len(policies)])
        a = rollin_alignment(expert, cfg, rng)
        partial = apply_masking(a, cfg.masking, rng)
        if lattice.path_score(a) > constrained_forward(lattice, partial, a) + IDENTITY_TOLERANCE:
            violations += 1
    return violations == 0, f"{violations} violations over {count} roll-in pairs"


def check_lattice_gradient(rng, count: int = 20, epsilon: float = 1e-6) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(count):
        _, a, partial = random_instance(rng, max_T=5, max_vocab=3)
        scores = rng.normal(0.0, 1.0, size=(len(a), a.vocab.size))

        def loss(s):
            return -constrained_forward(LogProbLattice.from_scores(s), partial, a)

        lattice = LogProbLattice.from_scores(scores)
        _, posteriors = forward_backward(lattice, partial, a)
        analytic = lattice_gradient(lattice, posteriors)
        numeric = np.zeros_like(scores)
        for index in np.ndindex(scores.shape):
            bumped = scores.copy()
            bumped[index] += epsilon
            dropped = scores.copy()
            dropped[index] -= epsilon
            numeric[index] = (loss(bumped) - loss(dropped)) / (2 * epsilon)
        worst = max(worst, relative_error(analytic, numeric))
    return worst <= LATTICE_GRADIENT_TOLERANCE, f"max relative error {worst:.3g}"


def model_gradient_error(
    params: ModelParams,
    x: FeatureSeq,
    partial: PartialAlignment,
    a: Alignment,
    epsilon: float = 1e-6,
) -> dict[str, float]:
    """Relative error of every parameter gradient of the DP loss against central differences"""

    def loss(p):
        return -constrained_forward(forward(p, x, partial), partial, a)

    lattice, cache = forward(params, x, partial, return_cache=True)
    _, posteriors = forward_backward(lattice, partial, a)
    grads = backward(params, cache, lattice_gradient(lattice, posteriors))

    errors = {}
    for name, value in params.items():
        numeric = np.zeros_like(value)
        for index in np.ndindex(value.shape):
            original = value[index]
            value[index] = original + epsilon
            upper = loss(params)
            value[index] = original - epsilon
            lower = loss(params)
            value[index] = original
            numeric[index] = (upper - lower) / (2 * epsilon)
        errors[name] = relative_error(grads[name], numeric)
    return errors


def check_model_gradient(rng, count: int = 2) -> tuple[bool, str]:
    worst, worst_name = 0.0, ""
    vocab = TINY_MODEL.vocab
    for index in range(count):
        params = ModelParams.initialize(replace(TINY_MODEL, seed=index))
        T = 5
        x = FeatureSeq(rng.normal(size=(T, TINY_MODEL.feature_dim)))
        ids = np.zeros(T, dtype=np.int64)
        ids[rng.choice(T, size=2, replace=False)] = rng.integers(1, len(vocab.tokens) + 1, size=2)
        a = Alignment(tuple(ids), vocab)
        partial = mask_bernoulli(a, 0.6, rng)
        for name, error in model_gradient_error(params, x, partial, a).items():
            if error > worst:
                worst, worst_name = error, name
    return worst <= MODEL_GRADIENT_TOLERANCE, f"max relative error {worst:.3g} ({worst_name})"


def check_decoder(rng, count: int = 100) -> tuple[bool, str]:
    config = ModelConfig(
        feature_dim=4, hidden=8, heads=2, layers=1, ffn_dim=8, vocab_size=3, dropout=0.0
    )
    params = ModelParams.initialize(config)
    T = 12
    failures = []
    for B in (1, 2, 3, 4, 6, 12):
        x = FeatureSeq(rng.normal(size=(T, config.feature_dim)))
        _, trace = block_decode(params, x, DecodeConfig(block_size=B))
        blocks = BlockSpec(B, T).boundaries
        per_iteration = trace.by_iteration()
        if trace.iterations != B:
            failures.append(f"plain B={B} took {trace.iterations} iterations")
        for records in per_iteration.values():
            touched = sorted(next(i for i, b in enumerate(blocks) if r.slot in b) for r in records)
            if touched != list(range(len(blocks))):
                failures.append(f"plain B={B} did not commit once per block")
                break
    for index in range(count):
        x = FeatureSeq(rng.normal(size=(T, config.feature_dim)))
        B = (2, 3, 4, 6)[index % 4]
        _, trace = block_decode(params, x, DecodeConfig(block_size=B, strategy="rightmost_last"))
        if trace.has_adjacent_commits():
            failures.append(f"rightmost_last B={B} committed adjacent slots")
        _, trace = topk_decode(params, x, k=-(-T // B))
        if trace.has_adjacent_commits():
            failures.append(f"topk k={-(-T // B)} committed adjacent slots")
    return not failures, "; ".join(failures[:3]) or f"{count} decodes audited"


SUITES: dict[str, Callable] = {
    "oracle": check_oracle,
    "counting": check_counting,
    "reduction": check_reduction,
    "lower_bound": check_lower_bound,
    "lattice_gradient": check_lattice_gradient,
    "model_gradient": check_model_gradient,
    "decoder": check_decoder,
}


def run_selfcheck(seed: int = 0, suites: list[str] | None = None, **counts) -> list[SuiteResult]:
    """Run the named suites (all by default); `counts` maps suite name to instance count"""
    results = []
    for name in suites or SUITES:
        rng = np.random.default_rng([seed, list(SUITES).index(name)])
        started = time.perf_counter()
        kwargs = {"count": counts[name]} if name in counts else {}
        try:
            passed, detail = SUITES[name](rng, **kwargs)
        except Exception as err:
            passed, detail = False, f"raised {err.__class__.__name__}: {err}"
        result = SuiteResult(name, bool(passed), detail, time.perf_counter() - started)
        (logging.info if result.passed else logging.error)(str(result))
        results.append(result)
    return results
