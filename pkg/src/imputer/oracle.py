"""
Brute-force enumeration of alignment sets and exhaustive-sum likelihoods.

Only meant for small instances: it is the ground truth the dynamic programs are
tested against, so it refuses work beyond ORACLE_LIMIT alignments rather than
silently truncating.
"""

from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import Iterator, NamedTuple

from imputer.core_types import (
    Alignment,
    LabelSeq,
    PartialAlignment,
    collapse,
    is_compatible,
)
from imputer.dp_engine import NEG_INF, LogProbLattice, logsumexp
from imputer.errors import Infeasible, InvalidInput, OracleScaleError

ORACLE_LIMIT = 10**6


@dataclass(frozen=True)
class AlignmentSet:
    items: tuple[Alignment, ...]

    def __post_init__(self):
        if len(set(self.items)) != len(self.items):
            raise InvalidInput("Alignment set contains duplicates")
        if self.items:
            T = len(self.items[0])
            labels = collapse(self.items[0]).ids
            for a in self.items:
                if len(a) != T or collapse(a).ids != labels:
                    raise InvalidInput("Alignment set members must share length and labels")

    def __len__(self):
        return len(self.items)

    def __iter__(self) -> Iterator[Alignment]:
        return iter(self.items)

    def __contains__(self, a):
        return a in self.items


class OracleResult(NamedTuple):
    log_prob: float
    infeasible: bool = False


def _check_scale(T: int, m: int):
    size = comb(T, m)
    if size > ORACLE_LIMIT:
        raise OracleScaleError(
            f"C({T}, {m}) = {size} alignments exceeds the oracle limit of {ORACLE_LIMIT}"
        )


def enumerate_alignments(y: LabelSeq, T: int) -> AlignmentSet:
    """Every length-T alignment that collapses to y"""
    m = len(y)
    if T < m:
        raise Infeasible(f"Cannot align {m} tokens to {T} slots")
    _check_scale(T, m)
    blank_id = y.vocab.blank_id
    items = []
    for positions in combinations(range(T), m):
        ids = [blank_id] * T
        for slot, symbol in zip(positions, y.ids):
            ids[slot] = symbol
        items.append(Alignment(tuple(ids), y.vocab))
    return AlignmentSet(tuple(items))


def enumerate_compatible(partial: PartialAlignment, a: Alignment) -> AlignmentSet:
    """Alignments with the same labels as a that agree with every pinned slot"""
    if not is_compatible(partial, a):
        raise InvalidInput("Partial alignment is incompatible with the alignment")
    candidates = enumerate_alignments(collapse(a), len(a))
    return AlignmentSet(
        tuple(candidate for candidate in candidates if is_compatible(partial, candidate))
    )


def _sum_paths(L: LogProbLattice, alignments: AlignmentSet) -> float:
    return logsumexp([L.path_score(a) for a in alignments])


def brute_marginal(L: LogProbLattice, y: LabelSeq) -> OracleResult:
    if len(y) > L.T:
        return OracleResult(NEG_INF, infeasible=True)
    return OracleResult(_sum_paths(L, enumerate_alignments(y, L.T)))


def brute_constrained(
    L: LogProbLattice, partial: PartialAlignment, a: Alignment
) -> OracleResult:
    if len(a) != L.T:
        raise InvalidInput(f"Alignment has {len(a)} slots, lattice has {L.T}")
    compatible = enumerate_compatible(partial, a)
    if not len(compatible):
        return OracleResult(NEG_INF, infeasible=True)
    return OracleResult(_sum_paths(L, compatible))
