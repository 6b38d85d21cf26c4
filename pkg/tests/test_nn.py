import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from copvae import nn
from copvae.errors import ArityError, ConfigurationError, FrozenModelError, TrainingError
from copvae.mathcore import ad, gradient_error


def small_net(rng, acts=("tanh", "relu"), n_in=4, n_out=3):
    return nn.init_mlp(nn.mlp_spec(n_in, (6, 5), acts, n_out), rng)


def test_weights_within_bounds(rng):
    layers = nn.mlp_spec(18, nn.ENCODER_WIDTHS, nn.ENCODER_ACTIVATIONS, 5)
    net = nn.init_mlp(layers, rng)
    for i, layer in enumerate(net.layers):
        w = net.params[2 * i]
        assert np.abs(w).max() <= nn.init_bound(layer)


def test_initializer_follows_activation():
    layers = nn.mlp_spec(18, nn.ENCODER_WIDTHS, nn.ENCODER_ACTIVATIONS, 5)
    inits = [l.init for l in layers[:-1]]
    assert inits == ["he_uniform" if a == "relu" else "glorot_uniform"
                     for a in nn.ENCODER_ACTIVATIONS]


def test_he_variance(rng):
    layer = nn.LayerSpec(300, 300, "relu", "he_uniform")
    w = nn.init_mlp([layer], rng).params[0]
    assert w.var() == pytest.approx(2.0 / 300, rel=0.1)


def test_glorot_variance(rng):
    layer = nn.LayerSpec(300, 200, "tanh", "glorot_uniform")
    w = nn.init_mlp([layer], rng).params[0]
    assert w.var() == pytest.approx(2.0 / 500, rel=0.1)


def test_biases_zero(rng):
    net = small_net(rng)
    for b in net.params[1::2]:
        assert np.all(b == 0.0)


def test_unknown_tags():
    with pytest.raises(ConfigurationError):
        nn.LayerSpec(2, 2, "swish")
    with pytest.raises(ConfigurationError):
        nn.LayerSpec(2, 2, "relu", "lecun")


def test_identity_layer():
    net = nn.Mlp([nn.LayerSpec(3, 3)], [np.eye(3), np.zeros(3)])
    x = np.array([[0.2, -1.0, 4.0]])
    np.testing.assert_array_equal(nn.predict(net, x), x)


def test_pointwise_definitions():
    a = nn.ACTIVATIONS
    assert a["relu"](ad.Tensor(-1.0)).value == 0.0
    assert a["softplus"](ad.Tensor(0.0)).value == pytest.approx(math.log(2), abs=1e-15)
    assert a["scaled_sigmoid_2pi"](ad.Tensor(0.0)).value == pytest.approx(math.pi, abs=1e-15)


def test_shape_mismatch(rng):
    net = small_net(rng)
    with pytest.raises(ArityError):
        nn.predict(net, np.ones((2, 5)))


def test_forward_gradient_random_net(rng):
    net = small_net(rng, acts=("tanh", "relu"))
    x = rng.normal(size=(7, 4))
    w0 = net.params[0]

    def f(t):
        params = [t] + list(net.params[1:])
        return nn.forward(net, x, params).sum()

    assert gradient_error(f, w0) <= 1e-4


@pytest.mark.parametrize("tag", sorted(nn.ACTIVATIONS))
def test_activation_gradients(tag, rng):
    x = rng.normal(size=(3, 5))
    if tag == "relu":
        x = np.where(np.abs(x) < 1e-2, 0.5, x)
    w = rng.normal(size=(3, 5))
    assert gradient_error(lambda t: (nn.ACTIVATIONS[tag](t) * w).sum(), x) <= 1e-4


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_head_ranges(seed):
    x = np.random.default_rng(seed).normal(scale=5.0, size=(4, 6))
    soft = nn.ACTIVATIONS["softmax"](ad.Tensor(x)).value
    assert np.all(soft >= 0)
    np.testing.assert_allclose(soft.sum(axis=-1), 1.0, atol=1e-12)
    sig = nn.ACTIVATIONS["sigmoid"](ad.Tensor(x)).value
    assert np.all((sig > 0) & (sig < 1))
    ang = nn.ACTIVATIONS["scaled_sigmoid_2pi"](ad.Tensor(x)).value
    assert np.all((ang > 0) & (ang < 2 * np.pi))
    assert np.all(nn.ACTIVATIONS["softplus"](ad.Tensor(x)).value > 0)


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    out = nn.adam_step(nn.AdamState(lr=0.1), p, [np.zeros(2)])
    np.testing.assert_array_equal(out[0], p[0])


def test_adam_first_step():
    g = np.array([0.5, -3.0, 1e-9])
    state = nn.AdamState(lr=0.01)
    out = nn.adam_step(state, [np.zeros(3)], [g])[0]
    # With m = v = 0, bias correction leaves m_hat = g and v_hat = g^2.
    expected = -0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(out, expected, rtol=1e-12)
    assert state.step == 1


def test_adam_quadratic():
    theta = [np.array([1.0, 1.0])]
    state = nn.AdamState(lr=0.1)
    for _ in range(200):
        theta = nn.adam_step(state, theta, [2.0 * theta[0]])
    assert np.linalg.norm(theta[0]) < 1e-2


def test_adam_matches_scalar_recurrence():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    theta, m, v = 1.5, 0.0, 0.0
    state = nn.AdamState(lr=lr)
    p = [np.array([1.5])]
    for t in range(1, 30):
        g = 2 * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        p = nn.adam_step(state, p, [2 * p[0]])
    assert p[0][0] == pytest.approx(theta, abs=1e-14)


def test_early_stopper_constant_stream():
    stopper = nn.EarlyStopper(min_delta=1e-3, patience=7)
    fired = None
    for epoch in range(50):
        if stopper.update(1.0, epoch):
            fired = epoch
            break
    assert stopper.best_epoch == 0
    assert fired == 7


def test_early_stopper_small_gains_do_not_count():
    stopper = nn.EarlyStopper(min_delta=1e-3, patience=3)
    values = [1.0, 0.9995, 0.9992, 0.9991]
    assert [stopper.update(v, i) for i, v in enumerate(values)] == [False, False, False, True]


def test_early_stopper_resets_on_improvement():
    stopper = nn.EarlyStopper(min_delta=0.1, patience=2)
    assert not stopper.update(1.0, 0)
    assert not stopper.update(1.0, 1)
    assert not stopper.update(0.5, 2)
    assert stopper.best_epoch == 2
    assert not stopper.update(0.5, 3)
    assert stopper.update(0.5, 4)


def test_decoder_fits_linear_map(rng):
    a = rng.normal(size=(5, 4)) * 0.3
    x = rng.random((600, 5))
    y = x @ a
    layers = nn.mlp_spec(5, (16,), ("tanh",), 4)
    net, res = nn.pretrain_decoder(x[:500], y[:500], x[500:], y[500:], layers, lr=5e-3,
                                   batch_size=64, max_epochs=600, patience=100, min_delta=1e-9)
    assert res.history[res.best_epoch][1] < 1e-4
    assert net.frozen


def test_frozen_network_rejects_updates(rng):
    net = small_net(rng).freeze()
    with pytest.raises(FrozenModelError):
        nn.adam_step(nn.AdamState(), net.params, [np.zeros_like(p) for p in net.params])
    with pytest.raises(FrozenModelError):
        nn.adam_step(nn.AdamState(), [p.copy() for p in net.params],
                     [np.zeros_like(p) for p in net.params], model=net)
    with pytest.raises(FrozenModelError):
        net.set_params(net.params)
    with pytest.raises(ValueError):
        net.params[0][0, 0] = 1.0


def test_serialization_round_trip(rng):
    net = small_net(rng)
    text = json.dumps(net.to_dict())
    back = nn.Mlp.from_dict(json.loads(text))
    for a, b in zip(net.params, back.params):
        assert a.tobytes() == b.tobytes()
    assert back.spec_hash == net.spec_hash
    assert back.param_hash() == net.param_hash()


def test_serialization_detects_tampered_spec(rng):
    d = small_net(rng).to_dict()
    d["layers"][0]["activation"] = "relu"
    with pytest.raises(ConfigurationError):
        nn.Mlp.from_dict(d)


def test_incompatible_layers():
    with pytest.raises(ConfigurationError):
        nn.Mlp([nn.LayerSpec(2, 3), nn.LayerSpec(4, 1)],
               [np.zeros((2, 3)), np.zeros(3), np.zeros((4, 1)), np.zeros(1)])


def test_train_loop_is_reproducible(rng):
    x = rng.random((200, 3))
    y = np.sin(x.sum(axis=1, keepdims=True))
    layers = nn.mlp_spec(3, (8,), ("tanh",), 1)
    a = nn.pretrain_decoder(x[:150], y[:150], x[150:], y[150:], layers, max_epochs=20, seed=4)[1]
    b = nn.pretrain_decoder(x[:150], y[:150], x[150:], y[150:], layers, max_epochs=20, seed=4)[1]
    assert a.history == b.history


def test_train_loop_reports_divergence():
    params = [np.array([1.0])]

    def batch_loss(p, idx, rng):
        return ad.log(p[0] - 1.0).sum()

    with pytest.raises(TrainingError) as info:
        nn.train_loop(params, batch_loss, 4, lambda p, r: 0.0, batch_size=4, lr=0.1,
                      max_epochs=3, patience=5)
    assert info.value.epoch == 0
    assert info.value.last_good is not None


def test_clip_by_global_norm():
    g = [np.array([3.0]), np.array([4.0])]
    out = nn.clip_by_global_norm(g, 1.0)
    assert math.sqrt(sum(float(x @ x) for x in out)) == pytest.approx(1.0)
    assert nn.clip_by_global_norm(g, 10.0) is g
