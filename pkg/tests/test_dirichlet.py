import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evidgen import dirichlet as dl


def test_evidence_to_alpha_basics():
    np.testing.assert_array_equal(dl.evidence_to_alpha(np.zeros(10)), np.ones(10))
    np.testing.assert_array_equal(dl.evidence_to_alpha([1.0, 0.0]), [2.0, 1.0])


def test_evidence_to_alpha_unit_evidence_everywhere():
    alpha = dl.evidence_to_alpha(np.exp(np.zeros(10)))
    np.testing.assert_array_equal(alpha, np.full(10, 2.0))
    assert dl.total_uncertainty(alpha) == pytest.approx(0.5)


def test_evidence_to_alpha_rejects_negative_and_single_class():
    with pytest.raises(ValueError, match="non-negative"):
        dl.evidence_to_alpha([1.0, -0.1])
    with pytest.raises(ValueError, match="K >= 2"):
        dl.evidence_to_alpha([1.0])


def test_mean_and_variance_hand_values():
    mean, var = dl.mean_and_variance(np.array([1.0, 1.0]))
    np.testing.assert_allclose(mean, [0.5, 0.5])
    np.testing.assert_allclose(var, [1.0 / 12.0, 1.0 / 12.0])

    mean, var = dl.mean_and_variance(np.array([2.0, 1.0, 1.0]))
    assert mean[0] == pytest.approx(0.5)
    assert var[0] == pytest.approx(2.0 * 2.0 / (16.0 * 5.0))

    alpha = np.array([10.0] + [1.0] * 9)
    mean, _ = dl.mean_and_variance(alpha)
    assert mean[0] == pytest.approx(10.0 / 19.0)


def test_total_uncertainty_values():
    assert dl.total_uncertainty(np.ones(3)) == pytest.approx(1.0)
    assert dl.total_uncertainty(np.array([2.0, 2.0])) == pytest.approx(0.5)
    assert dl.total_uncertainty(np.full(4, 1e9)) < 1e-8


def test_misclassification_params_removal():
    np.testing.assert_array_equal(
        dl.misclassification_params(np.array([5.0, 1.0, 1.0]), 0), [1.0, 1.0]
    )
    np.testing.assert_array_equal(
        dl.misclassification_params(np.ones(10), 3), np.ones(9)
    )
    np.testing.assert_array_equal(
        dl.misclassification_params(np.array([3.0, 2.0, 4.0]), 2), [3.0, 2.0]
    )


def test_misclassification_params_batched():
    alpha = np.array([[3.0, 2.0, 4.0], [1.0, 5.0, 2.0]])
    out = dl.misclassification_params(alpha, np.array([2, 1]))
    np.testing.assert_array_equal(out, [[3.0, 2.0], [1.0, 2.0]])


def test_misclassification_params_rejects_single_class():
    with pytest.raises(ValueError):
        dl.misclassification_params(np.array([2.0]), 0)


def test_kl_to_uniform_hand_values():
    assert dl.kl_to_uniform(np.array([1.0, 1.0])) == pytest.approx(0.0, abs=1e-12)
    assert dl.kl_to_uniform(np.array([2.0, 1.0])) == pytest.approx(np.log(2.0) - 0.5, abs=1e-12)


def test_kl_to_uniform_rejects_alpha_below_one():
    with pytest.raises(ValueError, match=">= 1"):
        dl.kl_to_uniform(np.array([0.5, 2.0]))


@pytest.mark.parametrize("alpha", [
    (2.0, 1.0),
    (1.5, 5.0),
    (3.0, 3.0, 3.0),
    (5.0, 1.5, 2.0),
])
def test_kl_closed_form_matches_numeric_oracle_spotchecks(alpha):
    closed = dl.kl_to_uniform(np.array(alpha))
    numeric = dl.kl_to_uniform_numeric(np.array(alpha))
    assert closed == pytest.approx(numeric, abs=1e-3)


def test_dirichlet_log_pdf_hand_values():
    assert dl.dirichlet_log_pdf(np.ones(2), np.array([0.3, 0.7])) == pytest.approx(0.0)
    assert dl.dirichlet_log_pdf(np.array([2.0, 1.0]), np.array([0.5, 0.5])) == pytest.approx(0.0)
    assert dl.dirichlet_log_pdf(np.array([2.0, 2.0]), np.array([0.5, 0.5])) == pytest.approx(np.log(1.5))


def test_dirichlet_log_pdf_rejects_off_simplex():
    with pytest.raises(ValueError, match="simplex"):
        dl.dirichlet_log_pdf(np.ones(2), np.array([0.6, 0.6]))
    with pytest.raises(ValueError, match="simplex"):
        dl.dirichlet_log_pdf(np.ones(2), np.array([1.0, 0.0]))


def test_categorical_entropy_values():
    assert dl.categorical_entropy(np.full(10, 0.1)) == pytest.approx(np.log(10.0))
    assert dl.categorical_entropy(np.array([1.0, 0.0])) == 0.0
    assert dl.categorical_entropy(np.array([0.5, 0.5])) == pytest.approx(np.log(2.0))


def test_categorical_entropy_rejects_non_simplex():
    with pytest.raises(ValueError):
        dl.categorical_entropy(np.array([0.7, 0.7]))


def test_mean_always_on_simplex():
    rng = np.random.default_rng(0)
    evidence = rng.uniform(0.0, 50.0, size=(100, 7))
    mean, _ = dl.mean_and_variance(dl.evidence_to_alpha(evidence))
    np.testing.assert_allclose(mean.sum(axis=-1), 1.0, atol=1e-9)


def test_kl_zero_iff_uniform():
    assert dl.kl_to_uniform(np.ones(5)) == pytest.approx(0.0, abs=1e-9)
    rng = np.random.default_rng(1)
    for _ in range(50):
        alpha = 1.0 + rng.uniform(0.01, 10.0, size=rng.integers(2, 6))
        assert dl.kl_to_uniform(alpha) > 0.0


def test_uncertainty_strictly_decreasing_in_any_alpha():
    rng = np.random.default_rng(2)
    for _ in range(25):
        alpha = 1.0 + rng.uniform(0.0, 5.0, size=4)
        base = dl.total_uncertainty(alpha)
        for k in range(4):
            bumped = alpha.copy()
            bumped[k] += 0.5
            assert dl.total_uncertainty(bumped) < base


def test_variance_matches_dirichlet_sampling():
    rng = np.random.default_rng(3)
    for _ in range(3):
        alpha = 1.0 + rng.uniform(0.0, 8.0, size=3)
        draws = rng.dirichlet(alpha, size=1_000_000)
        _, var = dl.mean_and_variance(alpha)
        sample_var = draws.var(axis=0, ddof=1)
        # standard error of the sample variance from the fourth central moment
        n = len(draws)
        m4 = ((draws - draws.mean(axis=0)) ** 4).mean(axis=0)
        se = np.sqrt((m4 - sample_var**2) / n)
        assert np.all(np.abs(sample_var - var) < 3.0 * se)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=1.0, max_value=100.0), min_size=2, max_size=8))
def test_property_kl_nonnegative_and_mean_on_simplex(alpha_list):
    alpha = np.array(alpha_list)
    assert dl.kl_to_uniform(alpha) >= -1e-12
    mean, var = dl.mean_and_variance(alpha)
    assert abs(mean.sum() - 1.0) < 1e-9
    assert np.all(var >= 0.0)
    assert 0.0 < dl.total_uncertainty(alpha) <= 1.0 + 1e-12
