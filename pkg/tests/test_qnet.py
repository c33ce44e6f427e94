import time

import numpy as np
import pytest

from safe_ret.qnet import (
    HIDDEN,
    INPUT_DIM,
    NUM_WEIGHTS,
    QNet,
    TrainHyper,
    encode,
    grad_check,
    q_value,
    q_values_all,
)


def _batch(seed, n=16):
    rng = np.random.default_rng(seed)
    return rng.random((n, 4)), rng.integers(0, 3, n), rng.normal(0, 2, n)


def test_architecture():
    assert INPUT_DIM == 7 and HIDDEN == (100, 50, 20)
    # (7*100+100) + (100*50+50) + (50*20+20) + (20*1+1)
    assert NUM_WEIGHTS == 800 + 5050 + 1020 + 21 == 6891


def test_hyper_defaults_and_validation():
    h = TrainHyper()
    assert (h.gamma, h.lr, h.batch_size, h.epochs) == (0.9, 1e-3, 50, 20)
    with pytest.raises(ValueError):
        TrainHyper(gamma=1.0)
    with pytest.raises(ValueError):
        TrainHyper(lr=0.0)


def test_malformed_weights():
    with pytest.raises(ValueError):
        QNet(np.zeros(NUM_WEIGHTS - 1))


def test_zero_net():
    net = QNet.zeros()
    assert q_value(net, [0.3, 0.2, 0.1, 0.9], 2) == 0.0


def test_output_bias_passthrough():
    net = QNet.zeros()
    net.layers[-1][1][:] = 1.75
    assert np.all(net.q_values(np.random.default_rng(0).random((5, 4))) == 1.75)


def test_init_reproducible():
    s = [0.1, 0.5, 0.7, 0.2]
    assert q_value(QNet.init(3), s, 1) == q_value(QNet.init(3), s, 1)
    assert q_value(QNet.init(3), s, 1) != q_value(QNet.init(4), s, 1)


def test_q_values_all_order():
    net = QNet.init(0)
    s = np.array([0.2, 0.4, 0.6, 0.8])
    expected = [q_value(net, s, a) for a in range(3)]
    assert q_values_all(net, s).tolist() == pytest.approx(expected, abs=1e-14)


def test_encode_one_hot():
    x = encode([[0.1, 0.2, 0.3, 0.4]], [2])
    assert x.tolist() == [[0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 1.0]]


def test_zero_residual_leaves_weights():
    net = QNet.init(1)
    obs, act, _ = _batch(0)
    y = net.predict(obs, act)
    before = net.w.copy()
    net.sgd_step(obs, act, y, 1e-3)
    assert np.array_equal(net.w, before)


def test_last_layer_gradient_closed_form():
    net = QNet.init(2)
    obs, act, y = _batch(5, n=1)
    acts, _ = net._forward(encode(obs, act))
    h = acts[-2][0]
    q = acts[-1][0, 0]
    _, grad = net.loss_and_grad(obs, act, y)
    # d/dW (y - h.W - b)^2 = -2 (y - q) h
    g_w = grad[NUM_WEIGHTS - 21 : NUM_WEIGHTS - 1]
    g_b = grad[NUM_WEIGHTS - 1]
    assert g_w == pytest.approx(-2 * (y[0] - q) * h, rel=1e-12, abs=1e-14)
    assert g_b == pytest.approx(-2 * (y[0] - q), rel=1e-12)


def test_loss_decreases_monotonically():
    net = QNet.init(7)
    obs, act, y = _batch(3, n=10)
    losses = [net.sgd_step(obs, act, y, 1e-3) for _ in range(100)]
    assert np.all(np.diff(losses) < 0)


def test_sgd_rejects_bad_targets():
    net = QNet.init(0)
    with pytest.raises(ValueError):
        net.sgd_step(np.zeros((1, 4)), [0], [np.nan], 1e-3)
    with pytest.raises(ValueError):
        net.sgd_step(np.zeros((0, 4)), [], [], 1e-3)


def test_batch_permutation_invariance():
    net = QNet.init(0)
    obs, act, y = _batch(1)
    perm = np.random.default_rng(0).permutation(len(y))
    _, g1 = net.loss_and_grad(obs, act, y)
    _, g2 = net.loss_and_grad(obs[perm], act[perm], y[perm])
    assert np.allclose(g1, g2, rtol=1e-12, atol=1e-12)


def test_grad_check_many_nets():
    t0 = time.perf_counter()
    worst = max(grad_check(QNet.init(k), *_batch(100 + k), epsilon=1e-5, seed=k) for k in range(20))
    assert worst < 1e-4
    assert time.perf_counter() - t0 < 10.0


def test_grad_check_negative_control():
    net = QNet.init(0)
    obs, act, y = _batch(0)
    _, grad = net.loss_and_grad(obs, act, y)
    bad = grad.copy()
    bad[:800] *= 2.0  # first layer
    assert grad_check(net, obs, act, y, grad=bad, n_coords=NUM_WEIGHTS) > 0.1


def test_grad_check_zero_case():
    net = QNet.zeros()
    assert grad_check(net, np.zeros((3, 4)), [0, 1, 2], np.zeros(3)) == 0.0


def test_grad_check_epsilon_range():
    with pytest.raises(ValueError):
        grad_check(QNet.zeros(), np.zeros((1, 4)), [0], [0.0], epsilon=1e-2)


def test_save_load_roundtrip(tmp_path):
    net = QNet.init(11)
    p = tmp_path / "n.qnet"
    net.save(p, note="x")
    back = QNet.load(p)
    assert np.array_equal(back.w, net.w) and back.seed == 11
    header = QNet.read_header(p)
    assert header["num_weights"] == NUM_WEIGHTS and header["note"] == "x"
    assert p.stat().st_size == 4 + len(p.read_bytes()) - 4  # sanity: readable
    assert len(p.read_bytes()) - (4 + int.from_bytes(p.read_bytes()[:4], "little")) == 8 * NUM_WEIGHTS
