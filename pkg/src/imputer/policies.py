"""
Roll-in policies: expert alignments with shift noise, and the masking policies
that turn a sampled alignment into the partial alignment the model conditions on.
"""

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from imputer.core_types import Alignment, BlockSpec, PartialAlignment
from imputer.errors import ConfigurationError

MaskingKind = Literal["bernoulli", "uniform", "block"]


@dataclass(frozen=True)
class MaskingPolicy:
    kind: MaskingKind = "block"
    p: float = 0.5
    block_size: int = 8

    def __post_init__(self):
        if self.kind not in ("bernoulli", "uniform", "block"):
            raise ConfigurationError(f"Unknown masking policy: {self.kind}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError(f"Bernoulli mask probability must be in [0, 1]: {self.p}")
        if self.block_size < 1:
            raise ConfigurationError(f"Block size must be positive: {self.block_size}")

    def __str__(self):
        if self.kind == "bernoulli":
            return f"bernoulli({self.p})"
        if self.kind == "block":
            return f"block({self.block_size})"
        return self.kind


@dataclass(frozen=True)
class RollinConfig:
    shift_prob: float = 0.2
    masking: MaskingPolicy = field(default_factory=MaskingPolicy)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.shift_prob <= 1.0:
            raise ConfigurationError(f"shift_prob must be in [0, 1]: {self.shift_prob}")


def rollin_alignment(
    expert_a: Alignment, cfg: RollinConfig, rng: np.random.Generator
) -> Alignment:
    """Shift tokens of the expert alignment by one slot at random

    Tokens are visited left to right. Each one proposes a move with probability
    shift_prob, left or right with equal chance; the move is applied only when
    the destination slot holds a blank, which keeps the collapsed labels intact.
    """
    blank_id = expert_a.vocab.blank_id
    ids = list(expert_a.ids)
    token_slots = [t for t, symbol in enumerate(ids) if symbol != blank_id]
    for slot in token_slots:
        if rng.random() >= cfg.shift_prob:
            continue
        destination = slot + (1 if rng.integers(2) else -1)
        if 0 <= destination < len(ids) and ids[destination] == blank_id:
            ids[destination], ids[slot] = ids[slot], blank_id
    return Alignment(tuple(ids), expert_a.vocab)


def _mask_slots(a: Alignment, slots) -> PartialAlignment:
    ids = list(a.ids)
    for slot in slots:
        ids[int(slot)] = a.vocab.mask_id
    return PartialAlignment(tuple(ids), a.vocab)


def mask_bernoulli(a: Alignment, p: float, rng: np.random.Generator) -> PartialAlignment:
    draws = rng.random(len(a))
    return _mask_slots(a, np.flatnonzero(draws < p))


def mask_uniform(a: Alignment, rng: np.random.Generator) -> PartialAlignment:
    T = len(a)
    k = int(rng.integers(0, T + 1))
    return _mask_slots(a, rng.choice(T, size=k, replace=False))


def mask_block(a: Alignment, B: int, rng: np.random.Generator) -> PartialAlignment:
    b = int(rng.integers(0, B))
    slots = []
    for block in BlockSpec(B, len(a)).boundaries:
        n = min(b, len(block))
        chosen = rng.choice(len(block), size=n, replace=False)
        slots.extend(block.start + int(offset) for offset in chosen)
    return _mask_slots(a, slots)


def apply_masking(
    a: Alignment, policy: MaskingPolicy, rng: np.random.Generator
) -> PartialAlignment:
    if policy.kind == "bernoulli":
        return mask_bernoulli(a, policy.p, rng)
    if policy.kind == "uniform":
        return mask_uniform(a, rng)
    return mask_block(a, policy.block_size, rng)


def rollin(
    expert_a: Alignment, cfg: RollinConfig, rng: np.random.Generator
) -> tuple[Alignment, PartialAlignment]:
    a = rollin_alignment(expert_a, cfg, rng)
    return a, apply_masking(a, cfg.masking, rng)
