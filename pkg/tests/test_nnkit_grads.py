#!/usr/bin/env python
"""
Finite-difference checks of every trainable layer's backward pass, plus
forward oracles for the recurrent cells
"""

import os, sys

import numpy as np
import pytest

import testutils

from bxs.nnkit import (
    Conv1D,
    Conv2D,
    Dense,
    Softmax,
    Pool2D,
    LSTM,
    ConvLSTM2D,
    SoftAttention,
    ConvAttention,
    ConvAttention2D,
    ContextSum,
    HeadOutputNotSingleChannel,
    WaveNetBlock,
    lstm_step,
    conv_forward,
)
from bxs.nnkit.gradcheck import check_layer
from bxs.nnkit.models import build

TOL = 1e-4


def built(layer, shape, seed=0):
    layer.build(shape, np.random.default_rng(seed))
    return layer


def assert_grads(layer, shape, batch=2, seed=0):
    layer = built(layer, shape, seed)
    x = np.random.default_rng(seed + 100).normal(size=(batch,) + tuple(shape))
    errors = check_layer(layer, x, seed=seed)
    assert set(errors) == {"input"} | set(layer.params())
    bad = {k: v for k, v in errors.items() if not v < TOL}
    assert not bad, f"{layer!r}: {bad}"


@pytest.mark.parametrize(
    "kwargs,shape",
    [
        (dict(kernel=(3, 3), padding="same", activation="tanh"), (5, 4, 2)),
        (dict(kernel=(3, 3), padding=("reflect", "reflect101")), (6, 5, 2)),
        (dict(kernel=(2, 3), padding=("causal", "roll"), dilation=(2, 1), activation="sigmoid"), (6, 5, 2)),
        (dict(kernel=(3, 3), stride=2), (7, 7, 1)),
        (dict(kernel=(3, 1), padding=("tile", "valid")), (6, 3, 2)),
        (dict(kernel=(3, 3), padding=("wrap", "constant"), activation="softmax"), (4, 4, 1)),
    ],
)
def test_conv2d(kwargs, shape):
    assert_grads(Conv2D(3, **kwargs), shape)


def test_conv1d():
    assert_grads(Conv1D(3, kernel=3, padding="causal", dilation=2, activation="tanh"), (8, 2))
    assert_grads(Conv1D(2, kernel=2, stride=2), (8, 3))


def test_dense_and_softmax():
    assert_grads(Dense(3, activation="softmax"), (4,))
    assert_grads(Dense(2, activation="tanh"), (5, 3))
    assert_grads(Softmax(), (5,))


def test_avg_pool():
    assert_grads(Pool2D((2, 2), mode="avg"), (5, 4, 2))

    with pytest.raises(ValueError):
        Pool2D(mode="median")


@pytest.mark.parametrize("return_sequences", [True, False])
@pytest.mark.parametrize("bidirectional", [True, False])
def test_lstm(return_sequences, bidirectional):
    layer = LSTM(3, return_sequences=return_sequences, bidirectional=bidirectional)
    assert_grads(layer, (5, 2))


def test_attention():
    assert_grads(SoftAttention(), (6, 3))
    assert_grads(ConvAttention(hidden=(3,)), (6, 2))
    assert_grads(ConvAttention(hidden=(2,), reducer="avgpool", final_filters=3), (6, 2))
    assert_grads(ConvAttention2D(hidden=(2,), kernel=(3, 3), roll_on_segments=True), (3, 4, 2))

    with pytest.raises(HeadOutputNotSingleChannel):
        ConvAttention(final_filters=2)


def test_attention_after_models():
    x = np.random.default_rng(3).normal(size=(2, 5, 2))
    for name, options in [
        ("lstm-att", {}),
        ("lstm-convatt", {"hidden": (2,)}),
        ("lstm-convatt", {"hidden": (2,), "reducer": "avgpool", "final_filters": 2}),
    ]:
        model = build(name, (5, 2), n_classes=3, units=(3, 2), attention="after", **options)
        errors = check_layer(model, x)
        bad = {k: v for k, v in errors.items() if not v < TOL}
        assert not bad, f"{name}: {bad}"

    assert_grads(ContextSum(), (4, 3))


def test_attention_weights_sum_to_one():
    rng = np.random.default_rng(2)
    layer = built(ConvAttention(hidden=(3,)), (6, 2))
    x = rng.normal(size=(4, 6, 2))
    layer.forward(x)
    assert np.allclose(layer.alpha.sum(axis=1), 1.0)

    layer = built(ConvAttention2D(), (2, 4, 3))
    layer.forward(rng.normal(size=(4, 2, 4, 3)))
    assert np.allclose(layer.alpha.sum(axis=(1, 2)), 1.0)


def test_wavenet_block():
    assert_grads(WaveNetBlock(3, kernel=(2, 1), dilation=2), (6, 1, 3))
    assert_grads(WaveNetBlock(3, kernel=(2, 3), dilation=1, roll=True), (6, 5, 3))


def test_lstm_step_zero_weights():
    # Every gate sits at 0.5 and the candidate at 0
    c = np.array([[2.0, -1.0]])
    h, c_new, _ = lstm_step(
        np.ones((1, 3)), np.zeros((1, 2)), c, np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8)
    )
    assert np.allclose(c_new, 0.5 * c)
    assert np.allclose(h, 0.5 * np.tanh(0.5 * c))


def logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def test_conv_lstm_one_segment():
    # From zero state the cell is i * g and the forget gate drops out
    rng = np.random.default_rng(31)
    f = 3
    layer = built(ConvLSTM2D(f, kernel=(3, 3), padding=("same", "roll")), (1, 5, 3, 2))
    layer.weights["b"][...] = rng.normal(size=4 * f)
    x = rng.normal(size=(2, 1, 5, 3, 2))

    a = conv_forward(x[:, 0], layer.weights["Kx"], layer.weights["b"], padding=("same", "roll"))
    i, g, o = logistic(a[..., :f]), np.tanh(a[..., 2 * f : 3 * f]), logistic(a[..., 3 * f :])
    y = layer.forward(x)
    assert y.shape == (2, 5, 3, f)
    assert np.allclose(y, o * np.tanh(i * g))


def test_conv_lstm_zero_kernels():
    rng = np.random.default_rng(32)
    f, s = 2, 4
    layer = built(ConvLSTM2D(f, return_sequences=True), (s, 4, 3, 1))
    layer.weights["Kx"][...] = 0.0
    layer.weights["Kh"][...] = 0.0
    b = layer.weights["b"]
    b[...] = rng.normal(size=4 * f)

    y = layer.forward(rng.normal(size=(2, s, 4, 3, 1)))
    assert np.allclose(y, layer.forward(rng.normal(size=(2, s, 4, 3, 1))))
    assert np.allclose(y, y[:, :, :1, :1])

    i, fg, g, o = logistic(b[:f]), logistic(b[f : 2 * f]), np.tanh(b[2 * f : 3 * f]), logistic(b[3 * f :])
    c = np.zeros(f)
    for seg in range(s):
        c = fg * c + i * g
        assert np.allclose(y[:, seg], o * np.tanh(c))


def test_conv_lstm_shapes():
    layer = built(ConvLSTM2D(4, padding=("same", "roll"), return_sequences=True), (7, 24, 9, 1))
    assert layer.out_shape == (7, 24, 9, 4)
    y = layer.forward(np.random.default_rng(0).normal(size=(2, 7, 24, 9, 1)))
    assert y.shape == (2, 7, 24, 9, 4)
    assert np.isfinite(y).all()

    layer = built(ConvLSTM2D(4), (7, 24, 9, 1))
    assert layer.out_shape == (24, 9, 4)


#################################################
## Randomized shapes
#################################################

N_SHAPES = 20
MODES = ["valid", "same", "constant", "reflect", "reflect101", "tile", "causal", "wrap", "roll"]


def random_conv2d(rng, mode):
    """A Conv2D and an input shape that `mode` can pad"""
    kernel = [int(rng.choice([1, 2, 3])) for _ in range(2)]
    dilation = [int(rng.choice([1, 2])) for _ in range(2)]
    padding = [mode, mode]
    if mode == "roll":
        # Roll wraps the variables axis and needs an odd extent there
        kernel[1] = int(rng.choice([1, 3]))
        padding[0] = str(rng.choice(["same", "causal"]))
    spans = [d * (k - 1) + 1 for k, d in zip(kernel, dilation)]
    shape = tuple(int(s + rng.integers(1, 4)) for s in spans) + (int(rng.integers(1, 3)),)
    layer = Conv2D(
        int(rng.integers(1, 3)),
        kernel=tuple(kernel),
        stride=tuple(int(rng.choice([1, 2])) for _ in range(2)),
        dilation=tuple(dilation),
        padding=tuple(padding),
        activation=str(rng.choice(["linear", "tanh", "sigmoid", "softmax"])),
    )
    return layer, shape


@pytest.mark.parametrize("mode", MODES)
def test_conv2d_random_shapes(mode):
    rng = np.random.default_rng(MODES.index(mode))
    for ii in range(N_SHAPES):
        layer, shape = random_conv2d(rng, mode)
        assert_grads(layer, shape, seed=ii)


def test_conv1d_random_shapes():
    rng = np.random.default_rng(11)
    for ii in range(N_SHAPES):
        kernel, dilation = int(rng.integers(1, 4)), int(rng.choice([1, 2]))
        span = dilation * (kernel - 1) + 1
        layer = Conv1D(
            int(rng.integers(1, 3)),
            kernel=kernel,
            stride=int(rng.choice([1, 2])),
            dilation=dilation,
            padding=str(rng.choice(MODES[:-1])),
            activation=str(rng.choice(["linear", "tanh"])),
        )
        assert_grads(layer, (span + int(rng.integers(1, 4)), int(rng.integers(1, 3))), seed=ii)


def test_dense_and_softmax_random_shapes():
    rng = np.random.default_rng(12)
    for ii in range(N_SHAPES):
        shape = tuple(int(d) for d in rng.integers(1, 5, size=rng.integers(1, 3)))
        activation = str(rng.choice(["linear", "tanh", "sigmoid", "softmax"]))
        assert_grads(Dense(int(rng.integers(1, 4)), activation=activation), shape, seed=ii)
        assert_grads(Softmax(), shape, seed=ii)


def test_lstm_random_shapes():
    rng = np.random.default_rng(13)
    for ii in range(N_SHAPES):
        layer = LSTM(
            int(rng.integers(1, 4)),
            return_sequences=bool(rng.integers(2)),
            bidirectional=bool(rng.integers(2)),
        )
        assert_grads(layer, (int(rng.integers(2, 6)), int(rng.integers(1, 4))), seed=ii)


def test_attention_random_shapes():
    rng = np.random.default_rng(14)
    for ii in range(N_SHAPES):
        t, v = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        assert_grads(SoftAttention(), (t, v), seed=ii)

        hidden = tuple(int(h) for h in rng.integers(1, 4, size=rng.integers(1, 3)))
        kernel = int(rng.choice([1, 2, 3]))
        if rng.integers(2):
            layer = ConvAttention(hidden, kernel, reducer="avgpool", final_filters=int(rng.integers(1, 4)))
        else:
            layer = ConvAttention(hidden, kernel)
        assert_grads(layer, (t + 1, v), seed=ii)

        layer = ConvAttention2D(
            hidden=(int(rng.integers(1, 3)),),
            kernel=(int(rng.choice([1, 3])), int(rng.choice([1, 2, 3]))),
            roll_on_segments=bool(rng.integers(2)),
        )
        assert_grads(layer, (int(rng.integers(2, 4)), int(rng.integers(2, 5)), v), seed=ii)


if __name__ == "__main__":
    test_conv1d()
    test_dense_and_softmax()
    test_avg_pool()
    test_lstm_step_zero_weights()
    test_conv_lstm_one_segment()
    test_conv_lstm_zero_kernels()
    test_conv_lstm_shapes()
    test_conv1d_random_shapes()
    test_dense_and_softmax_random_shapes()
    test_lstm_random_shapes()
    test_attention_random_shapes()
    test_attention()
    test_attention_after_models()
    test_attention_weights_sum_to_one()
    test_wavenet_block()

    print("=" * 50)
    print(" All Passed ".center(50, "="))
    print("=" * 50)
