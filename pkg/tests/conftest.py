import numpy as np
import pytest

from imputer.core_types import Alignment, PartialAlignment, Vocab
from imputer.dataset import SyntheticSpec, gen_synthetic
from imputer.model import FeatureSeq, ModelConfig, ModelParams


"""
Specially named conftest.py allows fixtures to be shared among other files
"""

# Symbol ids used throughout the tests
BLANK, A, B, C, D = 0, 1, 2, 3, 4


@pytest.fixture
def vocab2():
    """Tokens A and B: three lattice columns {_, A, B}"""
    yield Vocab.of_size(2)


@pytest.fixture
def vocab4():
    """Tokens A..D: five lattice columns"""
    yield Vocab.of_size(4)


@pytest.fixture
def masked_pair(vocab4):
    """Partial alignment (A,_,B,M,M,M,D) with the rolled-in alignment (A,_,B,_,_,C,D)"""
    M = vocab4.mask_id
    a = Alignment((A, BLANK, B, BLANK, BLANK, C, D), vocab4)
    partial = PartialAlignment((A, BLANK, B, M, M, M, D), vocab4)
    yield partial, a


@pytest.fixture
def rng():
    yield np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    yield ModelConfig(
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


@pytest.fixture
def tiny_params(tiny_config):
    yield ModelParams.initialize(tiny_config)


@pytest.fixture
def tiny_features(tiny_config, rng):
    yield FeatureSeq(rng.normal(size=(6, tiny_config.feature_dim)))


@pytest.fixture
def toy_spec():
    yield SyntheticSpec(
        num_examples=12,
        vocab_size=2,
        min_length=1,
        max_length=3,
        feature_dim=3,
        noise=0.1,
    )


@pytest.fixture
def toy_dataset(toy_spec):
    yield gen_synthetic("unimodal", toy_spec, np.random.default_rng(0))


@pytest.fixture
def multimodal_dataset(toy_spec):
    yield gen_synthetic("multimodal", toy_spec, np.random.default_rng(0))


@pytest.fixture
def output_path(tmp_path):
    o = tmp_path / "test"
    o.mkdir()
    yield o
