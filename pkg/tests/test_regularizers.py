import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crst.core import DomainError, entropy, softmax, uniform
from crst.model import LabeledBatch, init
from crst.regularizers import (
    DEFAULT_ALPHA,
    RegularizerSpec,
    binary_loss_curve,
    mr_grad_logits,
    mr_value,
    mrkld_closed_form_minimizer,
    mrkld_regularized_ce,
    smoothed_label,
    verify_prop4,
    verify_prop5,
)
from crst.simplex import projected_gradient

KINDS = ["mrl2", "mrent", "mrkld"]


def fd_logit_grad(kind, z, h=1e-5):
    g = np.zeros_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (mr_value(kind, softmax(z + e)) - mr_value(kind, softmax(z - e))) / (2 * h)
    return g


@pytest.mark.parametrize("K", [2, 3, 7])
def test_values_at_uniform(K):
    u = uniform(K)
    assert math.isclose(mr_value("mrl2", u), 1 / K, abs_tol=1e-15)
    assert math.isclose(mr_value("mrkld", u), math.log(K), abs_tol=1e-14)
    assert math.isclose(mr_value("mrent", u), -math.log(K), abs_tol=1e-14)


def test_mrent_is_negative_entropy():
    assert math.isclose(mr_value("mrent", [0.9, 0.1]), -0.325082973391448240, abs_tol=1e-15)


def test_mrkld_zero_entry_is_infinite():
    assert mr_value("mrkld", [1.0, 0.0]) == math.inf


@pytest.mark.parametrize("kind", KINDS + ["none"])
@pytest.mark.parametrize("K", [2, 5, 16])
def test_gradient_vanishes_at_uniform(kind, K):
    assert np.max(np.abs(mr_grad_logits(kind, uniform(K)))) < 1e-14


def test_mrkld_gradient_example():
    g = mr_grad_logits("mrkld", [0.9, 0.1])
    np.testing.assert_allclose(g, [0.4, -0.4], atol=1e-15)
    z = np.log([0.9, 0.1])
    np.testing.assert_allclose(fd_logit_grad("mrkld", z), g, rtol=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(3)
    for _ in range(50):
        z = rng.normal(0, 2, rng.integers(2, 9))
        p = softmax(z)
        np.testing.assert_allclose(mr_grad_logits(kind, p), fd_logit_grad(kind, z), rtol=1e-5, atol=1e-8)


@given(st.lists(st.floats(-8, 8), min_size=2, max_size=10))
def test_mrkld_gradient_sums_to_zero(z):
    assert abs(mr_grad_logits("mrkld", softmax(np.array(z))).sum()) < 1e-14


def test_smoothed_label_examples():
    np.testing.assert_array_equal(smoothed_label([0, 1, 0], 0.0), [0, 1, 0])
    np.testing.assert_allclose(smoothed_label([1, 0], 1.0), [0.75, 0.25], atol=1e-15)
    # hot entry 1 - 3/8, others 1/8; coincides with the mrkld minimizer
    s = smoothed_label([0, 1, 0, 0], 1.0)
    np.testing.assert_allclose(s, [0.125, 0.625, 0.125, 0.125], atol=1e-15)
    np.testing.assert_allclose(s, mrkld_closed_form_minimizer([0, 1, 0, 0], 1.0), atol=1e-15)
    with pytest.raises(DomainError):
        smoothed_label([0.5, 0.5], 1.0)


@given(st.integers(2, 12), st.floats(0, 20))
def test_smoothed_label_is_prob_vector(K, alpha):
    y = np.zeros(K)
    y[K // 2] = 1
    s = smoothed_label(y, alpha)
    assert abs(s.sum() - 1) < 1e-12 and np.all(s >= 0)


def test_mrkld_minimizer_examples():
    np.testing.assert_array_equal(mrkld_closed_form_minimizer([0, 0, 1], 0.0), [0, 0, 1])
    np.testing.assert_allclose(mrkld_closed_form_minimizer([1, 0, 0, 0], 1.0), [0.625, 0.125, 0.125, 0.125])
    np.testing.assert_allclose(mrkld_closed_form_minimizer([1, 0], 1.0), smoothed_label([1, 0], 1.0), atol=1e-15)


@pytest.mark.parametrize("alpha", [0.1, 0.5, 1.0])
@pytest.mark.parametrize("K", [2, 4, 8])
def test_mrkld_minimizer_vs_projected_gradient(alpha, K):
    y = np.zeros(K)
    y[0] = 1
    fun = lambda p: mrkld_regularized_ce(p, y, alpha)
    grad = lambda p: -y / p - alpha / (K * p)
    x = projected_gradient(fun, grad, np.full(K, 1 / K))
    assert np.max(np.abs(x - mrkld_closed_form_minimizer(y, alpha))) < 1e-4


def _batch(rng, n, d, K, soft=False):
    X = rng.normal(size=(n, d))
    Y = np.eye(K)[rng.integers(0, K, n)]
    return LabeledBatch(X, Y)


@pytest.mark.parametrize("arch", ["linear", "hidden"])
def test_kl_loss_equals_smoothed_label_loss(arch):
    rng = np.random.default_rng(11)
    for i in range(20):
        K = int(rng.integers(2, 6))
        m = init(arch, 3, K, hidden=5, seed=i)
        m = m.replace_params({k: v * rng.uniform(0.5, 4) for k, v in m.params.items()})
        alpha = float(rng.uniform(0, 2))
        assert verify_prop4(m, _batch(rng, 7, 3, K), _batch(rng, 9, 3, K), alpha) < 1e-9
    assert verify_prop4(m, _batch(rng, 4, 3, K), _batch(rng, 4, 3, K), 0.0) < 1e-12


def test_kl_minus_negative_entropy():
    gap, grad = verify_prop5(uniform(5))
    assert math.isclose(gap, math.log(5), abs_tol=1e-12)
    gap, grad = verify_prop5([0.9, 0.1])
    assert abs(gap - math.log(2)) < 1e-12
    p = softmax(np.random.default_rng(0).normal(size=8))
    gap, grad = verify_prop5(p)
    assert abs(gap - math.log(8)) < 1e-12
    assert np.max(np.abs(grad)) < 1e-12
    with pytest.raises(DomainError):
        verify_prop5([1.0, 0.0])


def test_binary_curves():
    grid = np.linspace(0.001, 0.999, 999)
    step = grid[1] - grid[0]
    c = binary_loss_curve("mrkld", 0.0, grid)
    assert c[np.argmin(c[:, 1]), 0] == grid[-1]
    c = binary_loss_curve("mrkld", 1.0, grid)
    assert abs(c[np.argmin(c[:, 1]), 0] - 0.75) <= step
    c = binary_loss_curve("lrent", 1.0, grid, p=0.9)
    assert abs(c[np.argmin(c[:, 1]), 0] - 0.9) <= step
    # regularization pulls the minimizer inward as alpha grows
    mins = [binary_loss_curve("mrkld", a, grid)[:, 1].argmin() for a in (0.1, 0.5, 2.0)]
    assert mins[0] > mins[1] > mins[2]
    with pytest.raises(DomainError):
        binary_loss_curve("mrkld", 1.0, [0.0, 0.5])


def test_spec_names_and_defaults():
    assert RegularizerSpec().name == "cbst"
    s = RegularizerSpec.from_name("mrkld+lrent")
    assert (s.mr, s.alpha_mr, s.lr, s.alpha_lr) == ("mrkld", 0.1, "lrent", 0.25)
    assert RegularizerSpec.from_name("lrent", alpha=0.5).alpha_lr == 0.5
    assert RegularizerSpec.from_name("mrl2").alpha_mr == DEFAULT_ALPHA["mrl2"] == 0.025
    assert RegularizerSpec.from_name("mrkld", alpha=0.0).name == "cbst"
    with pytest.raises(ValueError):
        RegularizerSpec("mrkld", -1.0)
    with pytest.raises(ValueError):
        RegularizerSpec.from_name("bogus")
