"""
WaveNet residual blocks on (T, W, C) maps.

A block runs two dilated causal convolutions (tanh filter, sigmoid gate),
multiplies them, and mixes channels with a 1x1 convolution. The result is
added to the block input (residual) and to the running skip sum. Stacked
blocks use dilation k**N on the time axis; the variables axis is never
dilated and may be roll-padded.
"""

import logging

import numpy as np

from .layers import Layer, Conv2D
from .ops import DTYPE, ShapeMismatch

logger = logging.getLogger(__name__)


def receptive_field(kernel, depth):
    """Time extent seen by the last block of a stack of `depth` blocks"""
    return sum(kernel**n * (kernel - 1) for n in range(1, depth + 1)) + 1


class WaveNetBlock(Layer):
    def __init__(self, filters, kernel=(2, 1), dilation=1, roll=False, name=None):
        super().__init__(name)
        self.filters = int(filters)
        self.kernel = tuple(kernel)
        self.dilation = int(dilation)
        self.roll = bool(roll)

    def config(self):
        return dict(filters=self.filters, kernel=list(self.kernel), dilation=self.dilation, roll=self.roll)

    def sublayers(self):
        return [("filter", self.filter), ("gate", self.gate), ("pool", self.pool)]

    def _build(self, in_shape, rng):
        if len(in_shape) != 3:
            raise ShapeMismatch(f"WaveNetBlock expects (T, W, C). Got {in_shape}")
        if in_shape[-1] != self.filters:
            raise ShapeMismatch(f"Residual needs {self.filters} input channels. Got {in_shape[-1]}")
        padding = ("causal", "roll" if self.roll else ("same" if self.kernel[1] > 1 else "valid"))
        common = dict(kernel=self.kernel, dilation=(self.dilation, 1), padding=padding)
        self.filter = Conv2D(self.filters, activation="tanh", **common)
        self.gate = Conv2D(self.filters, activation="sigmoid", **common)
        self.pool = Conv2D(self.filters, kernel=(1, 1))
        for layer in (self.filter, self.gate):
            if layer.build(in_shape, rng) != in_shape:
                raise ShapeMismatch(f"Block convolution must preserve {in_shape}")
        self.pool.build(in_shape, rng)
        return in_shape

    def forward(self, x):
        """Returns the residual output; the skip output is kept on .skip"""
        self.check_input(x)
        t = self.filter.forward(x)
        s = self.gate.forward(x)
        p = self.pool.forward(t * s)
        self._cache = (t, s)
        self.skip = p
        return x + p

    def forward_pair(self, x):
        res = self.forward(x)
        return res, self.skip

    def backward(self, dres, dskip=None):
        t, s = self._cache
        dp = dres if dskip is None else dres + dskip
        dz = self.pool.backward(dp)
        return dres + self.filter.backward(dz * s) + self.gate.backward(dz * t)


def wavenet_block(block, x, skip=None):
    """(residual out, skip accumulator + this block's skip)"""
    res, sk = block.forward_pair(x)
    return res, sk if skip is None else skip + sk


class WaveNetStack(Layer):
    """
    Input projection (1x1) to `filters` channels, `depth` blocks with
    dilation kernel**N (N = 1..depth), output relu(sum of skips).
    """

    def __init__(self, filters=8, kernel=(2, 1), depth=3, roll=False, name=None):
        super().__init__(name)
        self.filters = int(filters)
        self.kernel = tuple(kernel)
        self.depth = int(depth)
        self.roll = bool(roll)

    def config(self):
        return dict(filters=self.filters, kernel=list(self.kernel), depth=self.depth, roll=self.roll)

    def sublayers(self):
        return [("proj", self.proj)] + [(f"block{i}", b) for i, b in enumerate(self.blocks)]

    def _build(self, in_shape, rng):
        if len(in_shape) != 3:
            raise ShapeMismatch(f"WaveNetStack expects (T, W, C). Got {in_shape}")
        k = self.kernel[0]
        self.proj = Conv2D(self.filters, kernel=(1, 1))
        shape = self.proj.build(in_shape, rng)
        self.blocks = [
            WaveNetBlock(self.filters, self.kernel, dilation=k**n, roll=self.roll)
            for n in range(1, self.depth + 1)
        ]
        for block in self.blocks:
            block.build(shape, rng)
        return shape

    def forward(self, x):
        self.check_input(x)
        h = self.proj.forward(x)
        skip = None
        for block in self.blocks:
            h, skip = wavenet_block(block, h, skip)
        self._skip = skip
        return np.maximum(skip, 0.0)

    def backward(self, dy):
        dskip = dy * (self._skip > 0)
        dh = np.zeros_like(dskip, dtype=DTYPE)
        for block in reversed(self.blocks):
            dh = block.backward(dh, dskip)
        return self.proj.backward(dh)
