"""
Stateless tensor operations: activations, softmax and the 2D convolution.

Maps are batch-first and channels-last: (N, H, W, C). For the sequence models
H is time and W is variables.
"""

import logging

import numpy as np

from .padding import AxisPad, PadMethod

logger = logging.getLogger(__name__)

DTYPE = np.float64


class ShapeMismatch(ValueError):
    pass


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(x, axis=-1):
    axes = axis if isinstance(axis, tuple) else (axis,)
    shifted = x - np.max(x, axis=axes, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axes, keepdims=True)


def softmax_backward(y, dy, axis=-1):
    axes = axis if isinstance(axis, tuple) else (axis,)
    return y * (dy - np.sum(dy * y, axis=axes, keepdims=True))


ACTIVATIONS = ("linear", "relu", "tanh", "sigmoid", "softmax")


def activate(name, z, axis=-1):
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "softmax":
        return softmax(z, axis)
    raise ValueError(f"Unknown activation {name!r}. Options: {ACTIVATIONS}")


def activate_backward(name, z, y, dy, axis=-1):
    if name == "linear":
        return dy
    if name == "relu":
        return dy * (z > 0)
    if name == "tanh":
        return dy * (1.0 - y * y)
    if name == "sigmoid":
        return dy * y * (1.0 - y)
    if name == "softmax":
        return softmax_backward(y, dy, axis)
    raise ValueError(f"Unknown activation {name!r}. Options: {ACTIVATIONS}")


def _pair(v):
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ShapeMismatch(f"Expected a pair. Got {v!r}")
        return tuple(v)
    return (v, v)


class Conv2DOp:
    """
    y[n,i,j,:] = sum_{a,b} xp[n, i*sh + a*dh, j*sw + b*dw, :] @ K[a,b] + bias

    where xp is the input padded per axis. Output extent per axis is
    (padded - span) // stride + 1 with span = dilation * (k - 1) + 1.
    """

    def __init__(self, in_hw, kernel, stride=1, dilation=1, padding="valid", value=0):
        self.kernel = _pair(kernel)
        self.stride = _pair(stride)
        self.dilation = _pair(dilation)
        padding = tuple(PadMethod(p) for p in _pair(padding))
        self.padding = padding
        spans = [d * (k - 1) + 1 for k, d in zip(self.kernel, self.dilation)]
        self.pads = [AxisPad(p, s, n, value=value) for p, s, n in zip(padding, spans, in_hw)]
        self.in_hw = tuple(in_hw)
        out = []
        for pad_, span, st in zip(self.pads, spans, self.stride):
            if pad_.padded < span:
                raise ShapeMismatch(
                    f"Kernel span {span} exceeds padded extent {pad_.padded} (input {in_hw})"
                )
            out.append((pad_.padded - span) // st + 1)
        self.out_hw = tuple(out)

    def _slices(self, a, b):
        (sh, sw), (dh, dw), (ho, wo) = self.stride, self.dilation, self.out_hw
        return (
            slice(None),
            slice(a * dh, a * dh + sh * (ho - 1) + 1, sh),
            slice(b * dw, b * dw + sw * (wo - 1) + 1, sw),
            slice(None),
        )

    def _pad(self, x):
        return self.pads[1].forward(self.pads[0].forward(x, 1), 2)

    def forward(self, x, K, bias):
        if x.shape[1:3] != self.in_hw or x.shape[3] != K.shape[2]:
            raise ShapeMismatch(
                f"Input {x.shape} does not fit kernel {K.shape} on {self.in_hw}"
            )
        xp = self._pad(x)
        n = x.shape[0]
        y = np.zeros((n,) + self.out_hw + (K.shape[3],), dtype=DTYPE)
        kh, kw = self.kernel
        for a in range(kh):
            for b in range(kw):
                y += xp[self._slices(a, b)] @ K[a, b]
        y += bias
        return y, xp

    def backward(self, xp, K, dy):
        """(dx, dK, dbias) for upstream gradient dy of the pre-activation"""
        dxp = np.zeros_like(xp)
        dK = np.zeros_like(K)
        kh, kw = self.kernel
        for a in range(kh):
            for b in range(kw):
                sl = self._slices(a, b)
                dK[a, b] = np.einsum("nhwc,nhwd->cd", xp[sl], dy)
                dxp[sl] += dy @ K[a, b].T
        dx = self.pads[0].backward(self.pads[1].backward(dxp, 2), 1)
        return dx, dK, dy.sum(axis=(0, 1, 2))


def conv_forward(x, K, bias, stride=1, dilation=1, padding="valid", activation="linear"):
    """Functional 2D convolution on (N, H, W, C) with kernel (kh, kw, C, F)"""
    op = Conv2DOp(x.shape[1:3], K.shape[:2], stride, dilation, padding)
    z, _ = op.forward(np.asarray(x, dtype=DTYPE), K, bias)
    return activate(activation, z, axis=(1, 2))


def glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)
