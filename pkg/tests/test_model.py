import numpy as np
import pytest

from crst.core import softmax
from crst.model import (
    LabeledBatch,
    SgdConfig,
    forward,
    init,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
    sgd_step,
)
from crst.regularizers import RegularizerSpec


def batch(rng, n, d, K, soft=False, unselected=0):
    X = rng.normal(size=(n, d))
    Y = softmax(rng.normal(size=(n, K))) if soft else np.eye(K)[rng.integers(0, K, n)]
    Y[:unselected] = 0
    return LabeledBatch(X, Y)


def perturbed(m, rng, scale=1.5):
    return m.replace_params({k: v + scale * rng.normal(size=v.shape) for k, v in m.params.items()})


def fd_grads(m, f, h=1e-5):
    out = {}
    for k, w in m.params.items():
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            hi, lo = dict(m.params), dict(m.params)
            hi[k] = w.copy()
            lo[k] = w.copy()
            hi[k][idx] += h
            lo[k][idx] -= h
            g[idx] = (f(m.replace_params(hi)) - f(m.replace_params(lo))) / (2 * h)
        out[k] = g
    return out


def test_init_shapes_and_determinism():
    a, b = init("linear", 2, 3, seed=4), init("linear", 2, 3, seed=4)
    assert a.params["W0"].shape == (2, 3) and a.params["b0"].shape == (3,)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    h = init("hidden", 2, 3, hidden=8, seed=0)
    assert h.params["W0"].shape == (2, 8) and h.params["W1"].shape == (8, 3)
    assert not np.any(h.params["b0"]) and not np.any(h.params["b1"])
    with pytest.raises(ValueError):
        init("conv", 2, 3)
    with pytest.raises(ValueError):
        init("linear", 0, 3)


def test_forward_examples():
    m = init("linear", 3, 4, seed=0)
    m = m.replace_params({k: np.zeros_like(v) for k, v in m.params.items()})
    _, p = forward(m, np.random.default_rng(0).normal(size=(5, 3)))
    np.testing.assert_array_equal(p, 0.25)
    m = init("hidden", 3, 4, hidden=6, seed=1)
    X = np.tile([[0.3, -1.0, 2.0]], (7, 1))
    _, p = forward(m, X)
    assert np.all(p == p[0])
    with pytest.raises(ValueError):
        forward(m, np.zeros((2, 5)))


def test_forward_independent_reimplementation():
    rng = np.random.default_rng(2)
    m = perturbed(init("hidden", 4, 3, hidden=5, seed=2), rng)
    X = rng.normal(size=(10, 4))
    P = m.params
    ref = []
    for x in X:
        h = [np.tanh(sum(x[i] * P["W0"][i, j] for i in range(4)) + P["b0"][j]) for j in range(5)]
        z = [sum(h[j] * P["W1"][j, k] for j in range(5)) + P["b1"][k] for k in range(3)]
        e = np.exp(np.array(z) - max(z))
        ref.append(e / e.sum())
    np.testing.assert_allclose(forward(m, X)[1], ref, rtol=0, atol=1e-12)


def test_unselected_target_reduces_to_source_ce():
    rng = np.random.default_rng(0)
    m = perturbed(init("linear", 2, 3, seed=0), rng)
    src = batch(rng, 8, 2, 3)
    tgt = batch(rng, 5, 2, 3, unselected=5)
    L, g = loss_and_grad(m, src, tgt, RegularizerSpec("mrkld", 0.1))
    L0, g0 = loss_and_grad(m, src, LabeledBatch.empty(2, 3))
    assert L == L0
    for k in g:
        np.testing.assert_array_equal(g[k], g0[k])
    _, p = forward(m, src.inputs)
    assert np.isclose(L0, -np.sum(src.labels * np.log(p)), rtol=1e-13)


@pytest.mark.parametrize("kind", ["mrl2", "mrent", "mrkld"])
@pytest.mark.parametrize("alpha", [0.025, 0.1, 0.25])
@pytest.mark.parametrize("arch", ["linear", "hidden"])
def test_parameter_gradients_match_finite_differences(kind, alpha, arch):
    rng = np.random.default_rng(hash((kind, arch)) % 2**32)
    m = perturbed(init(arch, 3, 4, hidden=5, seed=1), rng, 0.8)
    src, tgt = batch(rng, 5, 3, 4), batch(rng, 6, 3, 4, soft=True, unselected=2)
    reg = RegularizerSpec(kind, alpha)
    _, g = loss_and_grad(m, src, tgt, reg)
    fd = fd_grads(m, lambda mm: loss_and_grad(mm, src, tgt, reg)[0])
    for k in g:
        big = np.abs(fd[k]) >= 1e-3
        rel = np.abs(g[k] - fd[k])[big] / np.abs(fd[k])[big]
        assert np.all(rel < 1e-5), k
        assert np.all(np.abs(g[k] - fd[k])[~big] < 1e-7), k


def test_mrkld_gradient_zero_at_uniform_output():
    rng = np.random.default_rng(1)
    m = init("linear", 2, 3, seed=0)
    m = m.replace_params({k: np.zeros_like(v) for k, v in m.params.items()})
    src, tgt = batch(rng, 4, 2, 3), batch(rng, 4, 2, 3)
    _, g0 = loss_and_grad(m, src, tgt)
    _, g1 = loss_and_grad(m, src, tgt, RegularizerSpec("mrkld", 0.7))
    for k in g0:
        np.testing.assert_allclose(g1[k], g0[k], rtol=0, atol=1e-15)


def test_zero_alpha_equals_none_and_permutation_invariance():
    rng = np.random.default_rng(5)
    m = perturbed(init("hidden", 2, 3, hidden=4, seed=0), rng)
    src, tgt = batch(rng, 6, 2, 3), batch(rng, 6, 2, 3, soft=True)
    L0, g0 = loss_and_grad(m, src, tgt)
    L1, g1 = loss_and_grad(m, src, tgt, RegularizerSpec("mrent", 0.0))
    assert L0 == L1
    for k in g0:
        np.testing.assert_array_equal(g0[k], g1[k])
    perm = rng.permutation(6)
    reg = RegularizerSpec("mrkld", 0.1)
    La, _ = loss_and_grad(m, src, tgt, reg)
    Lb, _ = loss_and_grad(m, src.subset(perm), tgt.subset(perm[::-1]), reg)
    assert np.isclose(La, Lb, rtol=1e-13)


def test_sgd_step():
    m = init("linear", 2, 2, seed=0)
    zero = {k: np.zeros_like(v) for k, v in m.params.items()}
    m1, _ = sgd_step(m, zero, SgdConfig(lr=0.1, weight_decay=0.0))
    for k in m.params:
        np.testing.assert_array_equal(m1.params[k], m.params[k])
    g = {k: np.ones_like(v) for k, v in m.params.items()}
    m2, _ = sgd_step(m, g, SgdConfig(lr=0.1, momentum=0.0, weight_decay=0.0))
    for k in m.params:
        np.testing.assert_array_equal(m2.params[k], m.params[k] - 0.1 * g[k])


def test_sgd_two_step_momentum_by_hand():
    m = init("linear", 1, 2, seed=0)
    m = m.replace_params({"W0": np.array([[1.0, -2.0]]), "b0": np.array([0.5, 0.0])})
    cfg = SgdConfig(lr=0.1, momentum=0.9, weight_decay=0.01)
    g1 = {"W0": np.array([[1.0, 0.0]]), "b0": np.array([2.0, -1.0])}
    g2 = {"W0": np.array([[0.5, 1.0]]), "b0": np.array([0.0, 1.0])}
    m, v = sgd_step(m, g1, cfg)
    m, v = sgd_step(m, g2, cfg, v)
    # W0[0]: v1=1, w1=1-0.1-0.001=0.899; v2=0.9+0.5=1.4, w2=0.899-0.14-0.000899
    # W0[1]: v1=0, w1=-2+0.002=-1.998;  v2=1,           w2=-1.998-0.1+0.001998
    np.testing.assert_allclose(m.params["W0"], [[0.758101, -2.096002]], atol=1e-15)
    # b0 (no decay): v2 = [1.8, 0.1]; b = [0.5-0.2-0.18, 0+0.1-0.01]
    np.testing.assert_allclose(m.params["b0"], [0.12, 0.09], atol=1e-15)
    np.testing.assert_allclose(v["b0"], [1.8, 0.1], atol=1e-15)


@pytest.mark.parametrize("arch", ["linear", "hidden"])
def test_checkpoint_round_trip(tmp_path, arch):
    rng = np.random.default_rng(0)
    m = perturbed(init(arch, 3, 4, hidden=5, seed=0), rng)
    path = tmp_path / "m.txt"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert (back.arch, back.input_dim, back.n_classes, back.hidden) == (m.arch, 3, 4, m.hidden)
    for k in m.params:
        assert back.params[k].tobytes() == m.params[k].tobytes()
    path.write_text("something else 1\n")
    with pytest.raises(ValueError):
        load_checkpoint(path)
