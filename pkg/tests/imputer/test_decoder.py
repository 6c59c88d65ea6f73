import numpy as np
import pytest

from imputer.core_types import BlockSpec, PartialAlignment, collapse
from imputer.decoder import (
    DecodeConfig,
    DecodeTrace,
    TraceRecord,
    block_decode,
    decode,
    eligible_slots,
    topk_decode,
)
from imputer.dp_engine import LogProbLattice
from imputer.errors import ConfigurationError
from imputer.model import FeatureSeq, ModelConfig, ModelParams

""" Unit tests for iterative decoding """

BLANK, A, B = 0, 1, 2


@pytest.fixture
def decoder_params():
    config = ModelConfig(
        feature_dim=4, hidden=8, heads=2, layers=1, ffn_dim=8, vocab_size=2, dropout=0.0
    )
    yield ModelParams.initialize(config)


@pytest.fixture
def features12(rng):
    yield FeatureSeq(rng.normal(size=(12, 4)))


@pytest.fixture
def fixed_lattice(mocker, rng):
    """Replace the network with a lattice that ignores the partial alignment"""
    lattice = LogProbLattice.from_scores(rng.normal(0.0, 3.0, size=(12, 3)))
    mocker.patch("imputer.decoder.forward", return_value=lattice)
    yield lattice


def _block_of(slot, blocks):
    return next(i for i, block in enumerate(blocks) if slot in block)


def test_decode_config_validation():
    with pytest.raises(ConfigurationError):
        DecodeConfig(block_size=0)
    with pytest.raises(ConfigurationError):
        DecodeConfig(strategy="beam")
    with pytest.raises(ConfigurationError):
        DecodeConfig(k=0)
    assert DecodeConfig(block_size=3).topk_for(12) == 4
    assert DecodeConfig(block_size=5).topk_for(12) == 3
    assert DecodeConfig(k=2).topk_for(12) == 2


def test_eligible_slots_fresh_blocks(vocab2):
    partial = PartialAlignment.all_masks(6, vocab2)
    blocks = BlockSpec(3, 6).boundaries
    assert eligible_slots(partial, blocks, "plain", 0) == [[0, 1, 2], [3, 4, 5]]
    assert eligible_slots(partial, blocks, "alternate_subblock", 0) == [[0, 1], [3, 4]]
    assert eligible_slots(partial, blocks, "alternate_subblock", 1) == [[2], [5]]
    assert eligible_slots(partial, blocks, "rightmost_last", 0) == [[0, 1], [3, 4]]


def test_eligible_slots_fallbacks(vocab2):
    partial = PartialAlignment.all_masks(6, vocab2).commit({0: A, 1: BLANK, 3: BLANK, 4: A})
    blocks = BlockSpec(3, 6).boundaries
    # Left halves are exhausted, so even iterations fall back to the right half
    assert eligible_slots(partial, blocks, "alternate_subblock", 2) == [[2], [5]]
    # Only the right-most slots remain
    assert eligible_slots(partial, blocks, "rightmost_last", 2) == [[2], [5]]
    with pytest.raises(ConfigurationError):
        eligible_slots(partial, blocks, "topk", 0)


def test_fixed_block_schedule(decoder_params, features12):
    """T=12, B=3: three iterations, one commitment per block each"""
    _, trace = block_decode(decoder_params, features12, DecodeConfig(block_size=3))
    blocks = BlockSpec(3, 12).boundaries
    assert trace.iterations == 3
    for iteration, records in trace.by_iteration().items():
        assert sorted(_block_of(r.slot, blocks) for r in records) == [0, 1, 2, 3]


@pytest.mark.parametrize("block_size", [1, 2, 4, 6, 12])
def test_iteration_count_equals_block_size(decoder_params, features12, block_size):
    _, trace = block_decode(decoder_params, features12, DecodeConfig(block_size=block_size))
    assert trace.iterations == block_size
    assert len(trace.records) == 12
    committed = PartialAlignment.all_masks(12, decoder_params.config.vocab)
    for iteration, records in sorted(trace.by_iteration().items()):
        committed = committed.commit({r.slot: r.symbol for r in records})
        for block in BlockSpec(block_size, 12).boundaries:
            assert sum(not committed.is_masked(t) for t in block) == iteration + 1


def test_single_slot_blocks_equal_argmax(decoder_params, features12, fixed_lattice):
    hypothesis, trace = block_decode(decoder_params, features12, DecodeConfig(block_size=1))
    argmax = np.argmax(fixed_lattice.values, axis=1)
    assert trace.iterations == 1
    assert trace.alignment.ids == tuple(argmax)
    assert hypothesis == collapse(trace.alignment)


def test_commitments_are_monotone(decoder_params, features12):
    hypothesis, trace = block_decode(
        decoder_params, features12, DecodeConfig(block_size=4, strategy="alternate_subblock")
    )
    replayed = trace.replay(12, decoder_params.config.vocab)
    assert replayed.to_alignment() == trace.alignment
    assert len({r.slot for r in trace.records}) == 12


@pytest.mark.parametrize("block_size", [2, 3, 4, 6])
def test_rightmost_slot_committed_last(decoder_params, features12, block_size):
    _, trace = block_decode(
        decoder_params, features12, DecodeConfig(block_size=block_size, strategy="rightmost_last")
    )
    for block in BlockSpec(block_size, 12).boundaries:
        iterations = {r.slot: r.iteration for r in trace.records if r.slot in block}
        assert iterations[block[-1]] == max(iterations.values())
        assert list(iterations.values()).count(iterations[block[-1]]) == 1
    assert not trace.has_adjacent_commits()


def test_alternate_subblock_starts_left(decoder_params, features12):
    _, trace = block_decode(
        decoder_params, features12, DecodeConfig(block_size=4, strategy="alternate_subblock")
    )
    first = trace.by_iteration()[0]
    assert all(r.slot % 4 < 2 for r in first)
    second = trace.by_iteration()[1]
    assert all(r.slot % 4 >= 2 for r in second)


def test_block_decode_rejects_topk(decoder_params, features12):
    with pytest.raises(ConfigurationError):
        block_decode(decoder_params, features12, DecodeConfig(strategy="topk"))


def test_topk_serial(decoder_params, features12, fixed_lattice):
    _, trace = topk_decode(decoder_params, features12, k=1)
    assert trace.iterations == 12
    confidence = fixed_lattice.values.max(axis=1)
    order = [r.slot for r in sorted(trace.records, key=lambda r: r.iteration)]
    assert order == sorted(range(12), key=lambda t: (-confidence[t], t))


def test_topk_skips_neighbours(decoder_params, features12, mocker):
    mocker.patch("imputer.decoder.forward", return_value=LogProbLattice.uniform(12, 3))
    _, trace = topk_decode(decoder_params, features12, k=12)
    assert [r.slot for r in trace.by_iteration()[0]] == [0, 2, 4, 6, 8, 10]
    assert trace.iterations == 2
    assert not trace.has_adjacent_commits()


def test_topk_rejects_nonpositive_k(decoder_params, features12):
    with pytest.raises(ConfigurationError):
        topk_decode(decoder_params, features12, k=0)


def test_decode_dispatch(decoder_params, features12, mocker):
    topk = mocker.patch("imputer.decoder.topk_decode", return_value=("hyp", DecodeTrace()))
    decode(decoder_params, features12, DecodeConfig(block_size=3, strategy="topk"))
    topk.assert_called_once_with(decoder_params, features12, 4)


def test_has_adjacent_commits():
    trace = DecodeTrace([TraceRecord(0, 1, A, -0.1), TraceRecord(0, 3, B, -0.2)])
    assert not trace.has_adjacent_commits()
    trace.records.append(TraceRecord(0, 2, A, -0.3))
    assert trace.has_adjacent_commits()


def test_trace_record_format():
    assert TraceRecord(2, 5, A, -0.12345678).to_record() == {
        "iteration": 2,
        "slot": 5,
        "symbol": A,
        "logprob": -0.123457,
    }
