"""
Iterative imputation decoding.

Decoding starts from an all-mask partial alignment. Every iteration runs the
network once and commits the most confident masked slot of every block (block
strategies) or the k most confident non-adjacent masked slots (top-k). A
committed symbol is never revisited.
"""

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from imputer.core_types import Alignment, BlockSpec, LabelSeq, PartialAlignment, collapse
from imputer.errors import ConfigurationError
from imputer.model import FeatureSeq, ModelParams, forward

Strategy = Literal["plain", "alternate_subblock", "rightmost_last", "topk"]
STRATEGIES = ("plain", "alternate_subblock", "rightmost_last", "topk")


@dataclass(frozen=True)
class DecodeConfig:
    block_size: int = 8
    strategy: Strategy = "plain"
    k: int | None = None

    def __post_init__(self):
        if self.block_size < 1:
            raise ConfigurationError(f"Block size must be positive, got {self.block_size}")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"Unknown decoding strategy: {self.strategy}")
        if self.k is not None and self.k < 1:
            raise ConfigurationError(f"k must be positive, got {self.k}")

    def topk_for(self, T: int) -> int:
        """k per iteration; defaults to ceil(T / B) so decoding takes about B steps"""
        return self.k if self.k is not None else max(1, -(-T // self.block_size))


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    slot: int
    symbol: int
    logprob: float

    def to_record(self) -> dict:
        return {
            "iteration": self.iteration,
            "slot": self.slot,
            "symbol": self.symbol,
            "logprob": round(self.logprob, 6),
        }


@dataclass
class DecodeTrace:
    records: list[TraceRecord] = field(default_factory=list)
    alignment: Alignment | None = None

    @property
    def iterations(self) -> int:
        return 1 + max((r.iteration for r in self.records), default=-1)

    def by_iteration(self) -> dict[int, list[TraceRecord]]:
        grouped: dict[int, list[TraceRecord]] = {}
        for record in self.records:
            grouped.setdefault(record.iteration, []).append(record)
        return grouped

    def has_adjacent_commits(self) -> bool:
        """True if some iteration committed two neighbouring slots"""
        for records in self.by_iteration().values():
            slots = sorted(r.slot for r in records)
            if any(b - a == 1 for a, b in zip(slots, slots[1:])):
                return True
        return False

    def replay(self, length: int, vocab) -> PartialAlignment:
        partial = PartialAlignment.all_masks(length, vocab)
        for iteration, records in sorted(self.by_iteration().items()):
            partial = partial.commit({r.slot: r.symbol for r in records})
        return partial


def eligible_slots(
    partial: PartialAlignment, blocks: list[range], strategy: Strategy, iteration: int
) -> list[list[int]]:
    """Masked slots each block may commit this iteration"""
    eligible = []
    for block in blocks:
        masked = [t for t in block if partial.is_masked(t)]
        if strategy == "plain" or not masked:
            eligible.append(masked)
        elif strategy == "alternate_subblock":
            split = block.start + (len(block) + 1) // 2
            left = [t for t in masked if t < split]
            right = [t for t in masked if t >= split]
            wanted, other = (left, right) if iteration % 2 == 0 else (right, left)
            # Fall back to the other half rather than idle the block
            eligible.append(wanted or other)
        elif strategy == "rightmost_last":
            rightmost = block[-1]
            rest = [t for t in masked if t != rightmost]
            eligible.append(rest or masked)
        else:
            raise ConfigurationError(f"Strategy {strategy} has no block eligibility rule")
    return eligible


def _best_slot(values: np.ndarray, slots: list[int]) -> tuple[int, int, float]:
    """Most confident slot; ties go to the lower slot, then the lower symbol"""
    best = None
    for slot in slots:
        symbol = int(np.argmax(values[slot]))
        score = float(values[slot, symbol])
        if best is None or score > best[2]:
            best = (slot, symbol, score)
    return best


def block_decode(
    params: ModelParams, x: FeatureSeq, cfg: DecodeConfig
) -> tuple[LabelSeq, DecodeTrace]:
    if cfg.strategy == "topk":
        raise ConfigurationError("Top-k decoding ignores blocks; use topk_decode")
    vocab = params.config.vocab
    T = params.config.encoder_length(x.T)
    blocks = BlockSpec(cfg.block_size, T).boundaries
    partial = PartialAlignment.all_masks(T, vocab)
    trace = DecodeTrace()

    iteration = 0
    while partial.mask_count:
        lattice = forward(params, x, partial)
        commits = {}
        for slots in eligible_slots(partial, blocks, cfg.strategy, iteration):
            if not slots:
                continue
            slot, symbol, logprob = _best_slot(lattice.values, slots)
            commits[slot] = symbol
            trace.records.append(TraceRecord(iteration, slot, symbol, logprob))
        partial = partial.commit(commits)
        iteration += 1

    trace.alignment = partial.to_alignment()
    logging.debug(f"Block decode finished in {iteration} iterations (B={cfg.block_size})")
    return collapse(trace.alignment), trace


def topk_decode(params: ModelParams, x: FeatureSeq, k: int) -> tuple[LabelSeq, DecodeTrace]:
    if k < 1:
        raise ConfigurationError(f"k must be positive, got {k}")
    vocab = params.config.vocab
    T = params.config.encoder_length(x.T)
    partial = PartialAlignment.all_masks(T, vocab)
    trace = DecodeTrace()

    iteration = 0
    while partial.mask_count:
        values = forward(params, x, partial).values
        ranked = sorted(
            partial.masked_slots, key=lambda t: (-float(values[t].max()), t)
        )
        commits = {}
        for slot in ranked:
            if len(commits) == k:
                break
            # Neighbouring slots are never imputed in the same iteration
            if slot - 1 in commits or slot + 1 in commits:
                continue
            symbol = int(np.argmax(values[slot]))
            commits[slot] = symbol
            trace.records.append(TraceRecord(iteration, slot, symbol, float(values[slot, symbol])))
        partial = partial.commit(commits)
        iteration += 1

    trace.alignment = partial.to_alignment()
    logging.debug(f"Top-{k} decode finished in {iteration} iterations")
    return collapse(trace.alignment), trace


def decode(params: ModelParams, x: FeatureSeq, cfg: DecodeConfig) -> tuple[LabelSeq, DecodeTrace]:
    if cfg.strategy == "topk":
        return topk_decode(params, x, cfg.topk_for(params.config.encoder_length(x.T)))
    return block_decode(params, x, cfg)
