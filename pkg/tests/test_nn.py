import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from redoffload.errors import ContractViolationError, DimensionError, TrainingDivergenceError
from redoffload.nn import (AdamState, DenseNet, adam_step, backward, forward, huber_loss, load_checkpoint,
                           save_checkpoint, softmax_cross_entropy, train_classifier)


def numeric_grad(f, p, eps=1e-6):
    g = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p[i]
        p[i] = old + eps
        up = f()
        p[i] = old - eps
        down = f()
        p[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


@pytest.mark.parametrize("sizes,output", [([5, 4, 3, 2], "softmax"), ([6, 5, 4, 3], "identity")])
def test_backward_matches_finite_differences(sizes, output):
    net = DenseNet(sizes, output, seed=1)
    rng = np.random.default_rng(0)
    for b in net.biases:  # zero biases put whole rows on the ReLU kink
        b[:] = rng.uniform(0.05, 0.3, size=b.shape)
    x = rng.normal(size=(7, sizes[0]))
    w = rng.normal(size=(7, sizes[-1]))

    def loss():
        return float(np.sum(w * forward(net, x)[0]))

    out, cache = forward(net, x)
    grads = backward(net, cache, w)
    for g, p in zip(grads, net.parameters()):
        np.testing.assert_allclose(g, numeric_grad(loss, p), rtol=1e-5, atol=1e-7)


def test_forward_oracle():
    net = DenseNet([2, 2, 1], seed=0)
    net.weights = [np.array([[1.0, -1.0], [2.0, 0.5]]), np.array([[3.0], [-2.0]])]
    net.biases = [np.array([0.0, 0.1]), np.array([0.5])]
    # hidden = relu([1+4, -1+1+0.1]) = [5, 0.1]; out = 15 - 0.2 + 0.5
    assert net(np.array([1.0, 2.0]))[0] == pytest.approx(15.3)


def test_softmax_rows_sum_to_one():
    net = DenseNet([3, 4, 5], "softmax")
    out = net(np.random.default_rng(0).normal(size=(10, 3)) * 50)
    np.testing.assert_allclose(out.sum(axis=1), 1.0)
    assert (out >= 0).all()


def test_stale_cache_and_shapes():
    net = DenseNet([3, 2])
    out, cache = forward(net, np.ones(3))
    with pytest.raises(DimensionError):
        backward(net, cache, np.ones(3))
    net.touch()
    with pytest.raises(ContractViolationError):
        backward(net, cache, np.ones(2))
    with pytest.raises(DimensionError):
        forward(net, np.ones(4))


@settings(max_examples=60)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.1, 5))
def test_huber(pred, target, kappa):
    loss, grad = huber_loss(pred, target, kappa)
    e = pred - target
    assert loss == pytest.approx(0.5 * e * e if abs(e) <= kappa else kappa * (abs(e) - kappa / 2))
    assert abs(grad) <= kappa + 1e-12
    h = 1e-6
    if abs(abs(e) - kappa) > 1e-3:
        num = (huber_loss(pred + h, target, kappa)[0] - huber_loss(pred - h, target, kappa)[0]) / (2 * h)
        assert grad == pytest.approx(num, abs=1e-5)


def test_cross_entropy_oracle():
    logits = np.array([[0.0, np.log(3.0)]])
    loss, grad = softmax_cross_entropy(logits, [1])
    assert loss == pytest.approx(-np.log(0.75))
    np.testing.assert_allclose(grad, [[0.25, -0.25]])


def test_adam_first_step_moves_by_learning_rate():
    # bias-corrected first step is lr * sign(g) up to epsilon
    net = DenseNet([2, 1], seed=0)
    before = [p.copy() for p in net.parameters()]
    g = [np.array([[2.0], [-0.5]]), np.array([3.0])]
    adam_step(net, g, AdamState.for_net(net, learning_rate=0.01))
    for b, p, gg in zip(before, net.parameters(), g):
        np.testing.assert_allclose(p - b, -0.01 * np.sign(gg), rtol=1e-6)


def test_adam_rejects_non_finite():
    net = DenseNet([2, 1])
    with pytest.raises(TrainingDivergenceError):
        adam_step(net, [np.array([[np.nan], [0.0]]), np.zeros(1)], AdamState.for_net(net))


def test_classifier_learns_separable_problem():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(400, 2))
    y = (x[:, 0] + x[:, 1] > 0).astype(int)
    net = DenseNet([2, 8, 2], "softmax", seed=0)
    hist = train_classifier(net, x, y, epochs=30, batch_size=32, learning_rate=1e-2)
    assert hist[-1] < hist[0]
    assert np.mean(net(x).argmax(axis=1) == y) > 0.95


def test_checkpoint_round_trip(tmp_path):
    net = DenseNet([4, 3, 2], "softmax", seed=3)
    adam = AdamState.for_net(net)
    adam_step(net, [np.ones_like(p) for p in net.parameters()], adam)
    other = DenseNet([4, 2], seed=9)
    save_checkpoint(tmp_path / "c.npz", net, adam, "abc", {"k": [1, 2]}, {"aux": other})
    ck, extra = load_checkpoint(tmp_path / "c.npz")
    for a, b in zip(ck.net.parameters(), net.parameters()):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(ck.adam.second_moment, adam.second_moment):
        np.testing.assert_array_equal(a, b)
    assert ck.adam.step_count == 1 and ck.catalog_digest == "abc" and ck.metadata == {"k": [1, 2]}
    np.testing.assert_array_equal(extra["aux"].weights[0], other.weights[0])
    x = np.ones(4)
    np.testing.assert_array_equal(ck.net(x), net(x))
