import pytest

from imputer.core_types import (
    Alignment,
    BlockSpec,
    LabelSeq,
    PartialAlignment,
    Vocab,
    collapse,
    is_compatible,
    is_valid_alignment,
)
from imputer.errors import InvalidInput

""" Unit tests for the core_types module """

BLANK, A, B, C, D = 0, 1, 2, 3, 4


def test_vocab_of_size():
    vocab = Vocab.of_size(4)
    assert vocab.tokens == (1, 2, 3, 4)
    assert vocab.blank_id == 0
    assert vocab.mask_id == 5
    assert vocab.size == 5
    assert vocab.is_token(A)
    assert not vocab.is_token(BLANK)
    assert not vocab.is_token(vocab.mask_id)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(tokens=()),
        dict(tokens=(1, 1)),
        dict(tokens=(0, 1), blank_id=0),
        dict(tokens=(1, 2), mask_id=2),
        dict(tokens=(1, 3)),
    ],
)
def test_vocab_rejects_invalid_ids(kwargs):
    with pytest.raises(InvalidInput):
        Vocab(**kwargs)


def test_vocab_of_size_rejects_empty():
    with pytest.raises(InvalidInput):
        Vocab.of_size(0)


def test_sequences_reject_foreign_ids(vocab4):
    with pytest.raises(InvalidInput):
        LabelSeq((A, BLANK), vocab4)
    with pytest.raises(InvalidInput):
        Alignment((A, vocab4.mask_id), vocab4)
    with pytest.raises(InvalidInput):
        PartialAlignment((A, 9), vocab4)


@pytest.mark.parametrize(
    "ids,expected",
    [
        ((BLANK, A, B, BLANK, C, BLANK, D), (A, B, C, D)),
        ((BLANK, BLANK, BLANK), ()),
        ((A, A, BLANK), (A, A)),
    ],
)
def test_collapse(vocab4, ids, expected):
    assert collapse(Alignment(ids, vocab4)).ids == expected


def test_collapse_raw_ids_needs_vocab(vocab4):
    assert collapse([BLANK, A], vocab4).ids == (A,)
    with pytest.raises(InvalidInput):
        collapse([BLANK, A])
    with pytest.raises(InvalidInput):
        collapse([vocab4.mask_id, A], vocab4)


@pytest.mark.parametrize(
    "ids,labels,expected",
    [
        ((BLANK, A, B, BLANK, C, BLANK, D), (A, B, C, D), True),
        ((BLANK, BLANK), (A,), False),
        ((A, B), (B, A), False),
    ],
)
def test_is_valid_alignment(vocab4, ids, labels, expected):
    assert is_valid_alignment(Alignment(ids, vocab4), LabelSeq(labels, vocab4)) is expected


def test_collapse_is_always_a_valid_alignment(vocab4):
    a = Alignment((C, BLANK, C, A, BLANK), vocab4)
    assert is_valid_alignment(a, collapse(a))


def test_is_compatible(vocab4, masked_pair):
    M = vocab4.mask_id
    partial = PartialAlignment((M, A, M, M, C, BLANK, D), vocab4)
    a = Alignment((BLANK, A, B, BLANK, C, BLANK, D), vocab4)
    assert is_compatible(partial, a)
    assert is_compatible(PartialAlignment.all_masks(7, vocab4), a)
    assert is_compatible(*masked_pair)
    assert not is_compatible(
        PartialAlignment((A, M), vocab4), Alignment((B, BLANK), vocab4)
    )


def test_is_compatible_length_mismatch(vocab4):
    with pytest.raises(InvalidInput):
        is_compatible(PartialAlignment.all_masks(2, vocab4), Alignment((A,), vocab4))


def test_partial_alignment_commit(vocab4):
    partial = PartialAlignment.all_masks(3, vocab4)
    assert partial.mask_count == 3
    partial = partial.commit({0: A, 2: BLANK})
    assert partial.ids == (A, vocab4.mask_id, BLANK)
    assert partial.masked_slots == [1]
    assert partial.is_masked(1)
    with pytest.raises(InvalidInput):
        partial.commit({0: B})
    with pytest.raises(InvalidInput):
        partial.commit({1: vocab4.mask_id})
    with pytest.raises(InvalidInput):
        partial.to_alignment()
    assert partial.commit({1: C}).to_alignment() == Alignment((A, C, BLANK), vocab4)


def test_partial_alignment_from_alignment(vocab4):
    a = Alignment((A, BLANK), vocab4)
    partial = PartialAlignment.from_alignment(a)
    assert partial.mask_count == 0
    assert partial.to_alignment() == a


@pytest.mark.parametrize(
    "block_size,length,expected",
    [
        (3, 12, [range(0, 3), range(3, 6), range(6, 9), range(9, 12)]),
        (4, 6, [range(0, 4), range(4, 6)]),
        (8, 0, []),
    ],
)
def test_block_boundaries(block_size, length, expected):
    assert BlockSpec(block_size, length).boundaries == expected


def test_block_spec_rejects_zero_block():
    with pytest.raises(InvalidInput):
        BlockSpec(0, 4)
