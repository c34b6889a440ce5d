import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gwhi import nn


def numeric_grad(f, p, h=1e-5):
    g = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p[i]
        p[i] = old + h
        fp = f()
        p[i] = old - h
        fm = f()
        p[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)


def test_identity_linear_layer():
    net = nn.DenseNet([nn.Dense(np.eye(3), None, "linear")])
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(net(x), x)


def test_quadratic_weight_gradient(rng):
    w = rng.standard_normal((4, 3))
    net = nn.DenseNet([nn.Dense(w, None, "linear")])
    x = rng.standard_normal((1, 4))
    out, cache = net.forward(x)
    _, (gw,) = net.backward(cache, out)  # d/dW of 0.5 * ||x W||^2
    np.testing.assert_allclose(gw, x.T @ (x @ w), atol=1e-14)


@pytest.mark.parametrize("act", ["leaky_relu", "sigmoid", "linear"])
def test_backprop_matches_finite_differences(rng, act):
    net = nn.DenseNet.build([5, 7, 6, 3], [act, act, "linear"], rng)
    x = rng.standard_normal((4, 5))
    target = rng.standard_normal((4, 3))

    def loss():
        return 0.5 * float(np.sum((net(x) - target) ** 2))

    out, cache = net.forward(x)
    gx, grads = net.backward(cache, out - target)
    for p, g in zip(net.params(), grads):
        assert rel_err(g, numeric_grad(loss, p)) < 1e-4
    assert rel_err(gx, numeric_grad(loss, x)) < 1e-4


class TestGlorot:
    def test_bound(self, rng):
        w = nn.glorot_uniform(2, 4, rng)
        assert np.all(np.abs(w) <= 1.0)

    def test_seeded(self):
        a = nn.glorot_uniform(3, 5, np.random.default_rng(1))
        b = nn.glorot_uniform(3, 5, np.random.default_rng(1))
        np.testing.assert_array_equal(a, b)

    def test_mean_near_zero(self, rng):
        w = nn.glorot_uniform(100, 1000, rng)
        assert abs(w.mean()) < 0.01 * np.sqrt(6 / 1100)


class TestGramTraceLogdet:
    def test_orthonormal(self):
        z = np.linalg.qr(np.random.default_rng(0).standard_normal((8, 4)))[0]
        value, _ = nn.gram_trace_logdet(z, ridge=1e-12)
        assert value == pytest.approx(4.0, abs=1e-9)

    def test_zero_matrix(self):
        eps = 1e-6
        value, _ = nn.gram_trace_logdet(np.zeros((5, 3)), eps)
        assert value == pytest.approx(3 * (eps - np.log(eps)), rel=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_eigen_oracle(self, seed):
        z = np.random.default_rng(seed).standard_normal((8, 4))
        zeta = np.linalg.eigvalsh(z.T @ z + 1e-6 * np.eye(4))
        value, _ = nn.gram_trace_logdet(z, 1e-6)
        assert value == pytest.approx(float(np.sum(zeta - np.log(zeta))), abs=1e-8)

    def test_gradient(self, rng):
        z = rng.standard_normal((6, 3))
        _, g = nn.gram_trace_logdet(z)
        assert rel_err(g, numeric_grad(lambda: nn.gram_trace_logdet(z)[0], z)) < 1e-4


def test_adam_zero_gradient_is_noop(rng):
    p = rng.standard_normal((3, 2))
    before = p.copy()
    opt = nn.Adam([p])
    for _ in range(3):
        opt.step([np.zeros_like(p)])
    np.testing.assert_array_equal(p, before)


def test_adam_reduces_quadratic():
    p = np.array([3.0, -2.0])
    opt = nn.Adam([p], lr=0.1)
    for _ in range(300):
        opt.step([2 * p])
    assert np.linalg.norm(p) < 0.05


def test_minibatches_cover_everything(rng):
    batches = nn.minibatches(10, 4, rng)
    assert [len(b) for b in batches] == [4, 4, 2]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))


def _train(seed):
    rng = np.random.default_rng(seed)
    net = nn.DenseNet.build([4, 8, 2], ["leaky_relu", "linear"], rng)
    opt = nn.Adam(net.params(), lr=0.01)
    x = np.random.default_rng(99).standard_normal((32, 4))
    for idx in nn.minibatches(32, 8, rng):
        out, cache = net.forward(x[idx])
        opt.step(net.backward(cache, out)[1])
    return net


def test_seeded_training_is_bit_identical():
    a, b = _train(5), _train(5)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)


def test_model_file_round_trip(tmp_path, rng):
    net = nn.DenseNet.build([3, 4, 2], ["sigmoid", "linear"], rng, bias=[True, False])
    model = nn.TrainedModel("demo", {"enc": net}, {"center": np.ones(2)}, {"seed": 3})
    model.save(tmp_path / "m.npz")
    back = nn.TrainedModel.load(tmp_path / "m.npz")
    x = rng.standard_normal((5, 3))
    np.testing.assert_array_equal(back.nets["enc"](x), net(x))
    assert back.kind == "demo" and back.meta == {"seed": 3}
    np.testing.assert_array_equal(back.arrays["center"], np.ones(2))


def test_width_mismatch_rejected(rng):
    net = nn.DenseNet.build([3, 2], "linear", rng)
    with pytest.raises(ValueError):
        net(np.zeros((2, 4)))
