from math import comb, log

import numpy as np
import pytest

from imputer.core_types import Alignment, LabelSeq, PartialAlignment, collapse
from imputer.dp_engine import LogProbLattice
from imputer.errors import Infeasible, InvalidInput, OracleScaleError
from imputer.oracle import (
    AlignmentSet,
    brute_constrained,
    brute_marginal,
    enumerate_alignments,
    enumerate_compatible,
)

""" Unit tests for the brute-force oracle """

BLANK, A, B, C, D = 0, 1, 2, 3, 4


def test_enumerate_single_token(vocab2):
    alignments = enumerate_alignments(LabelSeq((A,), vocab2), 2)
    assert set(alignments) == {
        Alignment((A, BLANK), vocab2),
        Alignment((BLANK, A), vocab2),
    }


@pytest.mark.parametrize("labels,T,count", [((A, B), 3, 3), ((A, B, C, D), 7, 35)])
def test_enumerate_counts(vocab4, labels, T, count):
    assert len(enumerate_alignments(LabelSeq(labels, vocab4), T)) == count


def test_enumerate_counts_match_binomial(vocab4):
    for T in range(1, 11):
        for m in range(0, min(T, 5) + 1):
            y = LabelSeq((A,) * m, vocab4)
            assert len(enumerate_alignments(y, T)) == comb(T, m)


def test_enumerate_infeasible(vocab2):
    with pytest.raises(Infeasible):
        enumerate_alignments(LabelSeq((A, B), vocab2), 1)


def test_enumerate_scale_guard(vocab2):
    with pytest.raises(OracleScaleError):
        enumerate_alignments(LabelSeq((A,) * 12, vocab2), 30)


def test_enumerate_compatible_masked_pair(masked_pair, vocab4):
    partial, a = masked_pair
    compatible = enumerate_compatible(partial, a)
    assert len(compatible) == 3
    for candidate in compatible:
        assert collapse(candidate).ids == (A, B, C, D)
        assert [candidate[t] for t in (3, 4, 5)].count(C) == 1


def test_enumerate_compatible_extremes(masked_pair, vocab4):
    _, a = masked_pair
    assert list(enumerate_compatible(PartialAlignment.from_alignment(a), a)) == [a]
    all_masks = PartialAlignment.all_masks(len(a), vocab4)
    assert set(enumerate_compatible(all_masks, a)) == set(
        enumerate_alignments(collapse(a), len(a))
    )


def test_enumerate_compatible_rejects_incompatible(vocab4):
    with pytest.raises(InvalidInput):
        enumerate_compatible(
            PartialAlignment((A, vocab4.mask_id), vocab4), Alignment((B, BLANK), vocab4)
        )


def test_alignment_set_rejects_duplicates(vocab2):
    a = Alignment((A, BLANK), vocab2)
    with pytest.raises(InvalidInput):
        AlignmentSet((a, a))
    with pytest.raises(InvalidInput):
        AlignmentSet((a, Alignment((B, BLANK), vocab2)))


def test_brute_marginal_uniform(vocab2):
    result = brute_marginal(LogProbLattice.uniform(2, 3), LabelSeq((A,), vocab2))
    assert result.log_prob == pytest.approx(-1.504077, abs=1e-6)
    assert result.log_prob == pytest.approx(log(2 / 9))
    assert not result.infeasible


def test_brute_marginal_single_slot(vocab2, rng):
    lattice = LogProbLattice.from_scores(rng.normal(size=(1, 3)))
    assert brute_marginal(lattice, LabelSeq((A,), vocab2)).log_prob == pytest.approx(
        lattice.values[0, A]
    )
    result = brute_marginal(lattice, LabelSeq((A, B), vocab2))
    assert result.infeasible
    assert result.log_prob == -np.inf


def test_brute_constrained_masked_pair(masked_pair):
    partial, a = masked_pair
    result = brute_constrained(LogProbLattice.uniform(7, 5), partial, a)
    assert result.log_prob == pytest.approx(-10.1675, abs=1e-4)
    assert result.log_prob == pytest.approx(log(3) - 7 * log(5))


def test_brute_constrained_reductions(masked_pair, vocab4, rng):
    partial, a = masked_pair
    lattice = LogProbLattice.from_scores(rng.normal(size=(7, 5)))
    complete = brute_constrained(lattice, PartialAlignment.from_alignment(a), a)
    assert complete.log_prob == pytest.approx(lattice.path_score(a))
    all_masks = brute_constrained(lattice, PartialAlignment.all_masks(7, vocab4), a)
    assert all_masks.log_prob == pytest.approx(
        brute_marginal(lattice, collapse(a)).log_prob
    )
