from dataclasses import dataclass
from typing import Sequence

import numpy as np


def edit_distance(hyp: Sequence[int], ref: Sequence[int]) -> int:
    """Levenshtein distance with unit insert, delete and substitute costs"""
    hyp, ref = list(hyp), list(ref)
    distances = np.arange(len(ref) + 1)
    for i, h in enumerate(hyp, start=1):
        previous = distances.copy()
        distances[0] = i
        for j, r in enumerate(ref, start=1):
            distances[j] = min(
                previous[j] + 1,  # deletion
                distances[j - 1] + 1,  # insertion
                previous[j - 1] + (h != r),  # substitution
            )
    return int(distances[-1])


def token_error_rate(hyp: Sequence[int], ref: Sequence[int]) -> float:
    return edit_distance(hyp, ref) / max(1, len(ref))


def mode_consistency(
    hyps: Sequence[Sequence[int]], mode_pairs: Sequence[tuple[Sequence[int], Sequence[int]]]
) -> float:
    """Fraction of hypotheses equal to either valid mode of their example"""
    if not hyps:
        return 0.0
    hits = sum(
        tuple(hyp) in (tuple(first), tuple(second))
        for hyp, (first, second) in zip(hyps, mode_pairs)
    )
    return hits / len(hyps)


@dataclass(frozen=True)
class EvalReport:
    examples: int
    missing: int
    mean_ter: float
    corpus_ter: float
    mode_consistency: float | None = None

    def to_record(self) -> dict:
        record = {
            "examples": self.examples,
            "missing": self.missing,
            "mean_ter": round(self.mean_ter, 6),
            "corpus_ter": round(self.corpus_ter, 6),
        }
        if self.mode_consistency is not None:
            record["mode_consistency"] = round(self.mode_consistency, 6)
        return record


def evaluate(
    hypotheses: dict[str, Sequence[int]],
    references: dict[str, Sequence[int]],
    modes: dict[str, tuple[Sequence[int], Sequence[int]]] | None = None,
) -> EvalReport:
    """Score hypotheses against references, both keyed by example id

    A reference without a hypothesis is scored against the empty sequence.
    """
    keys = sorted(references)
    missing = sum(1 for key in keys if key not in hypotheses)
    hyps = [list(hypotheses.get(key, ())) for key in keys]
    refs = [list(references[key]) for key in keys]
    edits = [edit_distance(h, r) for h, r in zip(hyps, refs)]
    mean_ter = (
        float(np.mean([e / max(1, len(r)) for e, r in zip(edits, refs)])) if keys else 0.0
    )
    corpus_ter = sum(edits) / max(1, sum(len(r) for r in refs))
    consistency = None
    if modes:
        consistency = mode_consistency(hyps, [modes[key] for key in keys])
    return EvalReport(len(keys), missing, mean_ter, corpus_ter, consistency)
