"""
Attention blocks. Each computes weights alpha shaped like its input h and
returns the context c = alpha * h, so it can sit before a recurrent stack
(attending the raw variables) or after one (attending its sequences).
"""

import logging

import numpy as np

from .layers import Layer, Dense, Conv1D, Conv2D
from .ops import DTYPE, ShapeMismatch, softmax, softmax_backward

logger = logging.getLogger(__name__)


class HeadOutputNotSingleChannel(ValueError):
    pass


def apply_attention(h, alpha):
    """c_i = alpha_i * h_i"""
    h = np.asarray(h, dtype=DTYPE)
    alpha = np.asarray(alpha, dtype=DTYPE)
    if h.shape != alpha.shape:
        raise ShapeMismatch(f"alpha {alpha.shape} does not match h {h.shape}")
    return alpha * h


class ContextSum(Layer):
    """Sum over time of an attended (T, C) sequence: the context vector c = sum_t alpha_t h_t"""

    def _build(self, in_shape, rng):
        if len(in_shape) != 2:
            raise ShapeMismatch(f"ContextSum expects (T, C). Got {in_shape}")
        return (in_shape[1],)

    def forward(self, x):
        self.check_input(x)
        return x.sum(axis=1)

    def backward(self, dy):
        return np.repeat(dy[:, None, :], self.in_shape[0], axis=1)


class SoftAttention(Layer):
    """
    Dense attention over time on (T, V): permute to (V, T), a Dense layer with
    softmax over time per variable, permute back, scale.
    """

    def sublayers(self):
        return [("dense", self.dense)]

    def _build(self, in_shape, rng):
        if len(in_shape) != 2:
            raise ShapeMismatch(f"SoftAttention expects (T, V). Got {in_shape}")
        t, v = in_shape
        self.dense = Dense(t, activation="softmax")
        self.dense.build((v, t), rng)
        return in_shape

    def forward(self, x):
        self.check_input(x)
        alpha = self.dense.forward(x.transpose(0, 2, 1)).transpose(0, 2, 1)
        self._cache = (x, alpha)
        self.alpha = alpha
        return alpha * x

    def backward(self, dc):
        x, alpha = self._cache
        dalpha = (dc * x).transpose(0, 2, 1)
        return dc * alpha + self.dense.backward(dalpha).transpose(0, 2, 1)


class _Heads(Layer):
    """Shared plumbing: one small conv stack per variable"""

    def _head_input(self, x, v):
        return x[..., v : v + 1]

    def sublayers(self):
        return [
            (f"head{v}.{k}", layer) for v, head in enumerate(self.heads) for k, layer in enumerate(head)
        ]

    def _run_head(self, head, x):
        for layer in head:
            x = layer.forward(x)
        return x

    def _back_head(self, head, dy):
        for layer in reversed(head):
            dy = layer.backward(dy)
        return dy


class ConvAttention(_Heads):
    """
    Multi-head convolutional attention on (T, V). Each variable gets its own
    Conv1D stack (Same padding). The head ends in a single-channel convolution
    with softmax over time, or with `reducer="avgpool"` in `final_filters`
    channels averaged before the softmax.
    """

    def __init__(self, hidden=(4,), kernel=3, activation="tanh", reducer="conv", final_filters=1, name=None):
        super().__init__(name)
        self.hidden = tuple(hidden)
        self.kernel = kernel
        self.activation = activation
        self.reducer = reducer
        self.final_filters = int(final_filters)
        if reducer not in {"conv", "avgpool"}:
            raise ValueError(f"reducer must be 'conv' or 'avgpool'. Got {reducer!r}")
        if reducer == "conv" and self.final_filters != 1:
            raise HeadOutputNotSingleChannel(
                f"Head must end in one channel. Got {self.final_filters} (use reducer='avgpool')"
            )

    def config(self):
        return dict(
            hidden=list(self.hidden),
            kernel=self.kernel,
            activation=self.activation,
            reducer=self.reducer,
            final_filters=self.final_filters,
        )

    def _new_head(self):
        head = [Conv1D(f, self.kernel, padding="same", activation=self.activation) for f in self.hidden]
        final_act = "softmax" if self.reducer == "conv" else "linear"
        head.append(Conv1D(self.final_filters, self.kernel, padding="same", activation=final_act))
        return head

    def _build(self, in_shape, rng):
        if len(in_shape) != 2:
            raise ShapeMismatch(f"ConvAttention expects (T, V). Got {in_shape}")
        t, v = in_shape
        self.heads = [self._new_head() for _ in range(v)]
        for head in self.heads:
            shape = (t, 1)
            for layer in head:
                shape = layer.build(shape, rng)
        return in_shape

    def alphas(self, x):
        cols = []
        self._pooled = []
        for v, head in enumerate(self.heads):
            out = self._run_head(head, self._head_input(x, v))
            if self.reducer == "avgpool":
                out = softmax(out.mean(axis=-1, keepdims=True), axis=1)
                self._pooled.append(out)
            cols.append(out[..., 0])
        return np.stack(cols, axis=-1)

    def forward(self, x):
        self.check_input(x)
        alpha = self.alphas(x)
        self._cache = (x, alpha)
        self.alpha = alpha
        return alpha * x

    def backward(self, dc):
        x, alpha = self._cache
        dalpha = dc * x
        dx = dc * alpha
        for v, head in enumerate(self.heads):
            d = dalpha[..., v : v + 1]
            if self.reducer == "avgpool":
                d = softmax_backward(self._pooled[v], d, axis=1)
                d = np.repeat(d / self.final_filters, self.final_filters, axis=-1)
            dx[..., v : v + 1] += self._back_head(head, d)
        return dx


class ConvAttention2D(_Heads):
    """
    Attention on (S, T, V) segmented input. Each variable gets a Conv2D stack
    over its (S, T) map ending in one channel with softmax over the whole map.
    Segments are wrapped (roll) when `roll_on_segments`; time uses Same.
    """

    def __init__(self, hidden=(4,), kernel=(1, 3), activation="tanh", roll_on_segments=False, name=None):
        super().__init__(name)
        self.hidden = tuple(hidden)
        self.kernel = tuple(kernel)
        self.activation = activation
        self.roll_on_segments = bool(roll_on_segments)

    def config(self):
        return dict(
            hidden=list(self.hidden),
            kernel=list(self.kernel),
            activation=self.activation,
            roll_on_segments=self.roll_on_segments,
        )

    def _build(self, in_shape, rng):
        if len(in_shape) != 3:
            raise ShapeMismatch(f"ConvAttention2D expects (S, T, V). Got {in_shape}")
        s, t, v = in_shape
        padding = ("roll" if self.roll_on_segments else "same", "same")
        self.heads = []
        for _ in range(v):
            head = [
                Conv2D(f, self.kernel, padding=padding, activation=self.activation) for f in self.hidden
            ]
            head.append(Conv2D(1, self.kernel, padding=padding, activation="softmax"))
            shape = (s, t, 1)
            for layer in head:
                shape = layer.build(shape, rng)
            if shape != (s, t, 1):
                raise HeadOutputNotSingleChannel(f"Head output {shape} is not a single {(s, t)} map")
            self.heads.append(head)
        return in_shape

    def forward(self, x):
        self.check_input(x)
        alpha = np.concatenate(
            [self._run_head(head, self._head_input(x, v)) for v, head in enumerate(self.heads)],
            axis=-1,
        )
        self._cache = (x, alpha)
        self.alpha = alpha
        return alpha * x

    def backward(self, dc):
        x, alpha = self._cache
        dalpha = dc * x
        dx = dc * alpha
        for v, head in enumerate(self.heads):
            dx[..., v : v + 1] += self._back_head(head, dalpha[..., v : v + 1])
        return dx
