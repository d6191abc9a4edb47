"""
Layers. Every layer is built lazily against its input shape (batch excluded),
caches what its backward pass needs during forward, and exposes its trainable
arrays through params() / grads() keyed by dotted names.
"""

import logging

import numpy as np

from .ops import (
    DTYPE,
    ShapeMismatch,
    Conv2DOp,
    activate,
    activate_backward,
    softmax,
    softmax_backward,
    glorot,
)

logger = logging.getLogger(__name__)

LAYERS = {}


class GraphContainsForwardOnlyLayer(ValueError):
    """A layer, or a graph holding one, that has no backward pass"""


class Layer:
    forward_only = False

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        LAYERS[cls.__name__] = cls

    def __init__(self, name=None):
        self.name = name
        self.weights = {}
        self._grads = {}
        self.in_shape = None
        self.out_shape = None

    def build(self, in_shape, rng):
        self.in_shape = tuple(int(s) for s in in_shape)
        self.out_shape = tuple(int(s) for s in self._build(self.in_shape, rng))
        return self.out_shape

    def _build(self, in_shape, rng):
        return in_shape

    def sublayers(self):
        return []

    def params(self):
        out = dict(self.weights)
        for prefix, layer in self.sublayers():
            out.update({f"{prefix}.{k}": v for k, v in layer.params().items()})
        return out

    def grads(self):
        out = dict(self._grads)
        for prefix, layer in self.sublayers():
            out.update({f"{prefix}.{k}": v for k, v in layer.grads().items()})
        return out

    def set_params(self, values):
        own = self.params()
        for key, value in values.items():
            if key not in own:
                raise KeyError(f"{type(self).__name__} has no parameter {key!r}")
            value = np.asarray(value, dtype=DTYPE)
            if value.shape != own[key].shape:
                raise ShapeMismatch(f"{key}: {value.shape} != {own[key].shape}")
            own[key][...] = value

    def is_forward_only(self):
        return self.forward_only or any(l.is_forward_only() for _, l in self.sublayers())

    def config(self):
        return {}

    def check_input(self, x):
        if tuple(x.shape[1:]) != self.in_shape:
            raise ShapeMismatch(
                f"{type(self).__name__} built for {self.in_shape}, got {tuple(x.shape[1:])}"
            )

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.config()})"


class Conv2D(Layer):
    def __init__(
        self,
        filters,
        kernel=(3, 3),
        stride=1,
        dilation=1,
        padding="valid",
        activation="linear",
        name=None,
    ):
        super().__init__(name)
        self.filters = int(filters)
        self.kernel = kernel
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        self.activation = activation

    def config(self):
        return dict(
            filters=self.filters,
            kernel=self.kernel,
            stride=self.stride,
            dilation=self.dilation,
            padding=self.padding,
            activation=self.activation,
        )

    def _build(self, in_shape, rng):
        if len(in_shape) != 3:
            raise ShapeMismatch(f"Conv2D expects (H, W, C). Got {in_shape}")
        h, w, c = in_shape
        self.op = Conv2DOp((h, w), self.kernel, self.stride, self.dilation, self.padding)
        kh, kw = self.op.kernel
        self.weights["K"] = glorot(rng, (kh, kw, c, self.filters), kh * kw * c, kh * kw * self.filters)
        self.weights["b"] = np.zeros(self.filters, dtype=DTYPE)
        return self.op.out_hw + (self.filters,)

    def forward(self, x):
        self.check_input(x)
        z, xp = self.op.forward(x, self.weights["K"], self.weights["b"])
        y = activate(self.activation, z, axis=(1, 2))
        self._cache = (xp, z, y)
        return y

    def backward(self, dy):
        xp, z, y = self._cache
        dz = activate_backward(self.activation, z, y, dy, axis=(1, 2))
        dx, dK, db = self.op.backward(xp, self.weights["K"], dz)
        self._grads = {"K": dK, "b": db}
        return dx


class Conv1D(Conv2D):
    """Convolution over time on (T, C) sequences"""

    def __init__(
        self, filters, kernel=3, stride=1, dilation=1, padding="valid", activation="linear", name=None
    ):
        super().__init__(
            filters,
            kernel=(kernel, 1),
            stride=(stride, 1),
            dilation=(dilation, 1),
            padding=(padding, "valid"),
            activation=activation,
            name=name,
        )
        self.args = dict(
            filters=filters,
            kernel=kernel,
            stride=stride,
            dilation=dilation,
            padding=padding,
            activation=activation,
        )

    def config(self):
        return dict(self.args)

    def _build(self, in_shape, rng):
        if len(in_shape) != 2:
            raise ShapeMismatch(f"Conv1D expects (T, C). Got {in_shape}")
        t, c = in_shape
        h, _, f = super()._build((t, 1, c), rng)
        return (h, f)

    def forward(self, x):
        self.check_input(x)
        z, xp = self.op.forward(x[:, :, None, :], self.weights["K"], self.weights["b"])
        y = activate(self.activation, z, axis=(1, 2))
        self._cache = (xp, z, y)
        return y[:, :, 0, :]

    def backward(self, dy):
        return super().backward(dy[:, :, None, :])[:, :, 0, :]


class Dense(Layer):
    """Affine map of the last axis; softmax activation normalizes that axis"""

    def __init__(self, units, activation="linear", name=None):
        super().__init__(name)
        self.units = int(units)
        self.activation = activation

    def config(self):
        return dict(units=self.units, activation=self.activation)

    def _build(self, in_shape, rng):
        c = in_shape[-1]
        self.weights["W"] = glorot(rng, (c, self.units), c, self.units)
        self.weights["b"] = np.zeros(self.units, dtype=DTYPE)
        return in_shape[:-1] + (self.units,)

    def forward(self, x):
        self.check_input(x)
        z = x @ self.weights["W"] + self.weights["b"]
        y = activate(self.activation, z, axis=-1)
        self._cache = (x, z, y)
        return y

    def backward(self, dy):
        x, z, y = self._cache
        dz = activate_backward(self.activation, z, y, dy, axis=-1)
        c = x.shape[-1]
        self._grads = {
            "W": x.reshape(-1, c).T @ dz.reshape(-1, self.units),
            "b": dz.reshape(-1, self.units).sum(axis=0),
        }
        return dz @ self.weights["W"].T


class Activation(Layer):
    def __init__(self, activation, name=None):
        super().__init__(name)
        self.activation = activation

    def config(self):
        return dict(activation=self.activation)

    def forward(self, x):
        y = activate(self.activation, x, axis=-1)
        self._cache = (x, y)
        return y

    def backward(self, dy):
        x, y = self._cache
        return activate_backward(self.activation, x, y, dy, axis=-1)


class Softmax(Layer):
    def __init__(self, axis=-1, name=None):
        super().__init__(name)
        self.axis = axis

    def config(self):
        return dict(axis=self.axis)

    def forward(self, x):
        self._y = softmax(x, self.axis)
        return self._y

    def backward(self, dy):
        return softmax_backward(self._y, dy, self.axis)


class Permute(Layer):
    """Permute the non-batch axes (0-based, batch excluded)"""

    def __init__(self, axes, name=None):
        super().__init__(name)
        self.axes = tuple(axes)

    def config(self):
        return dict(axes=list(self.axes))

    def _build(self, in_shape, rng):
        if sorted(self.axes) != list(range(len(in_shape))):
            raise ShapeMismatch(f"Permutation {self.axes} does not fit {in_shape}")
        self._fwd = (0,) + tuple(a + 1 for a in self.axes)
        self._bwd = tuple(np.argsort(self._fwd))
        return tuple(in_shape[a] for a in self.axes)

    def forward(self, x):
        return np.transpose(x, self._fwd)

    def backward(self, dy):
        return np.transpose(dy, self._bwd)


class Reshape(Layer):
    def __init__(self, shape, name=None):
        super().__init__(name)
        self.shape = tuple(shape)

    def config(self):
        return dict(shape=list(self.shape))

    def _build(self, in_shape, rng):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ShapeMismatch(f"Cannot reshape {in_shape} into {self.shape}")
        return self.shape

    def forward(self, x):
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        return dy.reshape((dy.shape[0],) + self.in_shape)


class Flatten(Reshape):
    def __init__(self, name=None):
        super().__init__((), name=name)

    def config(self):
        return {}

    def _build(self, in_shape, rng):
        self.shape = (int(np.prod(in_shape)),)
        return self.shape


class GlobalAveragePool(Layer):
    """Mean over every axis between batch and channels"""

    def _build(self, in_shape, rng):
        return (in_shape[-1],)

    def forward(self, x):
        self._axes = tuple(range(1, x.ndim - 1))
        return x.mean(axis=self._axes)

    def backward(self, dy):
        count = int(np.prod(self.in_shape[:-1]))
        shape = (dy.shape[0],) + (1,) * len(self._axes) + (dy.shape[-1],)
        return np.broadcast_to(dy.reshape(shape) / count, (dy.shape[0],) + self.in_shape).copy()


class Pool2D(Layer):
    """Non-overlapping max or average pooling of (H, W, C) maps; edges are cropped"""

    def __init__(self, size=(2, 2), mode="max", name=None):
        super().__init__(name)
        self.size = tuple(size)
        if mode not in {"max", "avg"}:
            raise ValueError(f"Pool mode must be 'max' or 'avg'. Got {mode!r}")
        self.mode = mode

    def config(self):
        return dict(size=list(self.size), mode=self.mode)

    def _build(self, in_shape, rng):
        h, w, c = in_shape
        ph, pw = self.size
        if h < ph or w < pw:
            raise ShapeMismatch(f"Pool {self.size} larger than {in_shape}")
        return (h // ph, w // pw, c)

    def forward(self, x):
        ph, pw = self.size
        ho, wo, c = self.out_shape
        n = x.shape[0]
        blocks = x[:, : ho * ph, : wo * pw, :].reshape(n, ho, ph, wo, pw, c)
        if self.mode == "avg":
            y = blocks.mean(axis=(2, 4))
        else:
            y = blocks.max(axis=(2, 4))
        self._cache = (blocks, y)
        return y

    def backward(self, dy):
        blocks, y = self._cache
        ph, pw = self.size
        ho, wo, c = self.out_shape
        n = dy.shape[0]
        expanded = dy[:, :, None, :, None, :]
        if self.mode == "avg":
            dblocks = np.broadcast_to(expanded / (ph * pw), blocks.shape)
        else:
            mask = blocks == y[:, :, None, :, None, :]
            dblocks = mask * expanded / mask.sum(axis=(2, 4), keepdims=True)
        dx = np.zeros((n,) + self.in_shape, dtype=DTYPE)
        dx[:, : ho * ph, : wo * pw, :] = dblocks.reshape(n, ho * ph, wo * pw, c)
        return dx


def layer_from_config(kind, config):
    if kind not in LAYERS:
        raise ValueError(f"Unknown layer type {kind!r}")
    return LAYERS[kind](**config)
