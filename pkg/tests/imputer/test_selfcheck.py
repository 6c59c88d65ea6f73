import numpy as np
import pytest

from imputer import dp_engine
from imputer.selfcheck import (
    SUITES,
    SuiteResult,
    check_counting,
    check_decoder,
    check_lattice_gradient,
    check_lower_bound,
    check_oracle,
    check_reduction,
    random_instance,
    relative_error,
    run_selfcheck,
)

""" Tests for the self-verification suites """

# Small instance counts keep the unit tests quick; the CLI runs the full sizes
QUICK = dict(
    oracle=50,
    counting=50,
    reduction=20,
    lower_bound=50,
    lattice_gradient=3,
    model_gradient=1,
    decoder=4,
)


def _off_by_one_alpha(values, labels, blank_id):
    """Forward recurrence that forgets the last slot"""
    alpha = np.full((values.shape[0] + 1, len(labels) + 1), dp_engine.NEG_INF)
    alpha[: values.shape[0]] = _original_alpha(values[:-1], labels, blank_id)
    alpha[-1] = alpha[-2]
    return alpha


_original_alpha = dp_engine._alpha


def test_random_instance_is_compatible(rng):
    for _ in range(20):
        lattice, a, partial = random_instance(rng)
        assert lattice.T == len(a) == len(partial)
        assert all(p in (s, partial.vocab.mask_id) for p, s in zip(partial, a))


def test_relative_error():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.2])) == pytest.approx(0.2 / 2.2)
    # Vanishing gradients are compared on an absolute scale
    assert relative_error(np.zeros(2), np.full(2, 1e-10)) < 1e-5


@pytest.mark.parametrize(
    "suite,count",
    [
        (check_oracle, 100),
        (check_counting, 100),
        (check_reduction, 20),
        (check_lower_bound, 100),
        (check_lattice_gradient, 3),
        (check_decoder, 4),
    ],
)
def test_suites_pass(suite, count):
    passed, detail = suite(np.random.default_rng(0), count=count)
    assert passed, detail


def test_run_selfcheck_reports_every_suite():
    results = run_selfcheck(0, **QUICK)
    assert [r.name for r in results] == list(SUITES)
    assert all(r.passed for r in results), [str(r) for r in results if not r.passed]


def test_run_selfcheck_subset():
    results = run_selfcheck(0, ["counting"], counting=10)
    assert len(results) == 1
    assert isinstance(results[0], SuiteResult)
    assert str(results[0]).startswith("PASS counting")


def test_broken_recurrence_is_caught(mocker):
    mocker.patch("imputer.dp_engine._alpha", side_effect=_off_by_one_alpha)
    results = run_selfcheck(0, ["oracle", "counting", "reduction"], oracle=200, reduction=50)
    failed = {r.name for r in results if not r.passed}
    assert failed & {"oracle", "counting"}


def test_suite_exceptions_become_failures(mocker):
    mocker.patch.dict(SUITES, {"oracle": mocker.Mock(side_effect=RuntimeError("boom"))})
    result = run_selfcheck(0, ["oracle"])[0]
    assert not result.passed
    assert "boom" in result.detail
