import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentview.alignment import target_rows
from latentview.model import (CheckpointMismatch, NetConfig, backward, forward, init_network, load_checkpoint,
                              log_softmax_rows, loss_fixed_assignment, save_checkpoint, sgd_step, softmax_rows)

from conftest import random_stack
from oracles import longhand_objective, numeric_gradient

TINY = NetConfig(image_shape=(6, 6), rows=3, cols=3, hidden=(5,), conv_channels=2, seed=7)


def rel_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-6) -> float:
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)).max())


def check_gradients(config: NetConfig, seed: int) -> float:
    rng = np.random.default_rng(seed)
    net = init_network(config)
    for v in net.params.values():
        v += rng.normal(scale=0.05, size=v.shape)
    x = rng.random((2, *config.image_shape))
    t = rng.integers(0, config.cols, size=(2, config.rows))
    grads, _ = backward(net, x, t)
    num = numeric_gradient(lambda: backward(net, x, t)[1], net.params)
    return max(rel_error(grads[k], num[k]) for k in grads)


@pytest.mark.parametrize("conv", [0, 2])
def test_gradients_match_finite_differences(conv):
    cfg = NetConfig(image_shape=(6, 6), rows=3, cols=3, hidden=(5, 4), conv_channels=conv, seed=1)
    assert check_gradients(cfg, 0) < 1e-4


def test_forward_rows_are_distributions():
    net = init_network(TINY)
    P = forward(net, np.random.default_rng(0).random((4, 6, 6)))
    assert P.shape == (4, 3, 3)
    np.testing.assert_allclose(P.sum(axis=-1), 1.0)
    assert forward(net, np.zeros((6, 6))).shape == (3, 3)


def test_forward_rejects_wrong_shape():
    with pytest.raises(ValueError, match="shape"):
        forward(init_network(TINY), np.zeros((5, 6)))


@given(arrays(np.float64, (3, 4), elements=st.floats(-700, 700)))
def test_softmax_is_stable(logits):
    p = softmax_rows(logits)
    assert np.isfinite(p).all()
    np.testing.assert_allclose(p.sum(axis=-1), 1.0)
    np.testing.assert_allclose(np.exp(log_softmax_rows(logits)), p, atol=1e-12)


@given(st.integers(0, 10_000), st.sampled_from([3, 5]), st.integers(1, 4))
def test_fixed_assignment_loss_matches_longhand(seed, M, N):
    rng = np.random.default_rng(seed)
    P = random_stack(rng, M, N)
    perm = rng.permutation(M)
    y = int(rng.integers(N))
    assert loss_fixed_assignment(P, perm, y) == pytest.approx(-longhand_objective(P.tolist(), perm, y), rel=1e-12)


def test_backward_loss_equals_assignment_loss():
    cfg = NetConfig(image_shape=(6, 6), rows=4, cols=3, hidden=(8,), seed=2)
    net = init_network(cfg)
    x = np.random.default_rng(1).random((4, 6, 6))
    perm, y = np.array([2, 3, 0, 1]), 1
    _, loss = backward(net, x, target_rows(perm, y, 2))
    assert loss == pytest.approx(loss_fixed_assignment(forward(net, x), perm, y), rel=1e-10)


def test_assignment_loss_validates_inputs():
    P = random_stack(np.random.default_rng(0), 3, 2)
    with pytest.raises(ValueError):
        loss_fixed_assignment(P, [0, 1, 2], 2)
    with pytest.raises(ValueError):
        loss_fixed_assignment(P, [0, 1], 0)


def test_backward_rejects_bad_targets():
    net = init_network(TINY)
    with pytest.raises(ValueError):
        backward(net, np.zeros((6, 6)), [0, 1, 3])
    with pytest.raises(ValueError):
        backward(net, np.zeros((6, 6)), [0, 1])


def test_init_is_seeded():
    a, b = init_network(TINY), init_network(TINY)
    c = init_network(NetConfig(**{**TINY.__dict__, "seed": 8}))
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert not np.array_equal(a.params["w0"], c.params["w0"])


def test_sgd_momentum_update_rule():
    net = init_network(TINY)
    w0 = net.params["w0"].copy()
    g = {k: np.ones_like(v) for k, v in net.params.items()}
    sgd_step(net, g, lr=0.1, momentum=0.5)
    sgd_step(net, g, lr=0.1, momentum=0.5)
    # v1 = -0.1, v2 = 0.5 * -0.1 - 0.1 = -0.15
    np.testing.assert_allclose(net.params["w0"], w0 - 0.25)
    np.testing.assert_allclose(net.velocity["w0"], -0.15)


def test_sgd_refuses_non_finite_gradient(caplog):
    net = init_network(TINY)
    before = net.copy()
    g = {k: np.zeros_like(v) for k, v in net.params.items()}
    g["b0"][0] = np.nan
    sgd_step(net, g)
    assert "non-finite" in caplog.text
    assert all(np.array_equal(before.params[k], net.params[k]) for k in net.params)


@pytest.mark.parametrize("lr,momentum", [(0.0, 0.9), (-1.0, 0.9), (0.1, 1.0), (0.1, -0.1)])
def test_sgd_validates_hyperparameters(lr, momentum):
    net = init_network(TINY)
    with pytest.raises(ValueError):
        sgd_step(net, {k: np.zeros_like(v) for k, v in net.params.items()}, lr, momentum)


def test_checkpoint_round_trip_is_exact(tmp_path):
    net = init_network(TINY)
    sgd_step(net, {k: np.full_like(v, 0.3) for k, v in net.params.items()})
    path = tmp_path / "ck.json"
    save_checkpoint(net, path, {"note": "x"})
    back, extra = load_checkpoint(path, expected=TINY)
    assert extra == {"note": "x"}
    assert back.config == TINY
    for k in net.params:
        assert np.array_equal(back.params[k], net.params[k])
        assert np.array_equal(back.velocity[k], net.velocity[k])


def test_checkpoint_config_mismatch(tmp_path):
    path = tmp_path / "ck.json"
    save_checkpoint(init_network(TINY), path)
    with pytest.raises(CheckpointMismatch, match="hash"):
        load_checkpoint(path, expected=NetConfig())
    doc = json.loads(path.read_text())
    doc["config"]["rows"] = 4
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(path)
