"""
Recurrent layers: LSTM (optionally bidirectional, trained with BPTT) and a
forward-only ConvLSTM2D that recurs over segments of 2D maps.

Gate order in every packed weight is input, forget, cell, output.
"""

import logging

import numpy as np

from .layers import Layer, GraphContainsForwardOnlyLayer
from .ops import DTYPE, ShapeMismatch, Conv2DOp, sigmoid, glorot

logger = logging.getLogger(__name__)


def lstm_step(x_t, h, c, Wx, Wh, b):
    """One cell update. Returns (h, c, cache)"""
    a = x_t @ Wx + h @ Wh + b
    u = h.shape[-1]
    i = sigmoid(a[:, :u])
    f = sigmoid(a[:, u : 2 * u])
    g = np.tanh(a[:, 2 * u : 3 * u])
    o = sigmoid(a[:, 3 * u :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (x_t, h, c, i, f, g, o, tc)


class LSTMCell(Layer):
    """One direction over (T, C). Outputs the full (T, units) sequence in input time order"""

    def __init__(self, units, reverse=False, name=None):
        super().__init__(name)
        self.units = int(units)
        self.reverse = bool(reverse)

    def config(self):
        return dict(units=self.units, reverse=self.reverse)

    def _build(self, in_shape, rng):
        if len(in_shape) != 2:
            raise ShapeMismatch(f"LSTM expects (T, C). Got {in_shape}")
        t, c = in_shape
        u = self.units
        self.weights["Wx"] = glorot(rng, (c, 4 * u), c, u)
        self.weights["Wh"] = glorot(rng, (u, 4 * u), u, u)
        b = np.zeros(4 * u, dtype=DTYPE)
        b[u : 2 * u] = 1.0
        self.weights["b"] = b
        return (t, u)

    def forward(self, x):
        self.check_input(x)
        if self.reverse:
            x = x[:, ::-1]
        n, t, _ = x.shape
        h = np.zeros((n, self.units), dtype=DTYPE)
        c = np.zeros((n, self.units), dtype=DTYPE)
        hs = np.zeros((n, t, self.units), dtype=DTYPE)
        caches = []
        for step in range(t):
            h, c, cache = lstm_step(x[:, step], h, c, self.weights["Wx"], self.weights["Wh"], self.weights["b"])
            hs[:, step] = h
            caches.append(cache)
        self._caches = caches
        return hs[:, ::-1] if self.reverse else hs

    def backward(self, dhs):
        if self.reverse:
            dhs = dhs[:, ::-1]
        Wx, Wh = self.weights["Wx"], self.weights["Wh"]
        n, t, u = dhs.shape
        dWx = np.zeros_like(Wx)
        dWh = np.zeros_like(Wh)
        db = np.zeros_like(self.weights["b"])
        dx = np.zeros((n, t, Wx.shape[0]), dtype=DTYPE)
        dh_next = np.zeros((n, u), dtype=DTYPE)
        dc_next = np.zeros((n, u), dtype=DTYPE)
        for step in reversed(range(t)):
            x_t, h_prev, c_prev, i, f, g, o, tc = self._caches[step]
            dh = dhs[:, step] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da = np.concatenate(
                [
                    dc * g * i * (1.0 - i),
                    dc * c_prev * f * (1.0 - f),
                    dc * i * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            dc_next = dc * f
            dWx += x_t.T @ da
            dWh += h_prev.T @ da
            db += da.sum(axis=0)
            dx[:, step] = da @ Wx.T
            dh_next = da @ Wh.T
        self._grads = {"Wx": dWx, "Wh": dWh, "b": db}
        return dx[:, ::-1] if self.reverse else dx


class LSTM(Layer):
    """
    LSTM over (T, C). Bidirectional concatenates the forward and reversed
    passes on the last axis. Without return_sequences the output is the final
    state of each direction (time T-1 forward, time 0 for the reversed pass).
    """

    def __init__(self, units, return_sequences=False, bidirectional=True, name=None):
        super().__init__(name)
        self.units = int(units)
        self.return_sequences = bool(return_sequences)
        self.bidirectional = bool(bidirectional)
        self.cells = [LSTMCell(units)]
        if self.bidirectional:
            self.cells.append(LSTMCell(units, reverse=True))

    def config(self):
        return dict(
            units=self.units,
            return_sequences=self.return_sequences,
            bidirectional=self.bidirectional,
        )

    def sublayers(self):
        names = ("fwd", "bwd")
        return list(zip(names, self.cells))

    def _build(self, in_shape, rng):
        t, _ = in_shape
        for cell in self.cells:
            cell.build(in_shape, rng)
        width = self.units * len(self.cells)
        return (t, width) if self.return_sequences else (width,)

    def forward(self, x):
        self.check_input(x)
        outs = [cell.forward(x) for cell in self.cells]
        if not self.return_sequences:
            outs = [outs[0][:, -1]] + [o[:, 0] for o in outs[1:]]
        return np.concatenate(outs, axis=-1)

    def backward(self, dy):
        t = self.in_shape[0]
        u = self.units
        dx = 0
        for k, cell in enumerate(self.cells):
            part = dy[..., k * u : (k + 1) * u]
            if not self.return_sequences:
                seq = np.zeros((dy.shape[0], t, u), dtype=DTYPE)
                seq[:, -1 if k == 0 else 0] = part
                part = seq
            dx = dx + cell.backward(part)
        return dx


class ConvLSTM2D(Layer):
    """
    Recurrence over segments of (H, W, C) maps with convolutional gates.
    Input (S, H, W, C). Forward only.
    """

    forward_only = True

    def __init__(self, filters, kernel=(3, 3), padding=("same", "roll"), return_sequences=False, name=None):
        super().__init__(name)
        self.filters = int(filters)
        self.kernel = kernel
        self.padding = padding
        self.return_sequences = bool(return_sequences)

    def config(self):
        return dict(
            filters=self.filters,
            kernel=self.kernel,
            padding=self.padding,
            return_sequences=self.return_sequences,
        )

    def _build(self, in_shape, rng):
        if len(in_shape) != 4:
            raise ShapeMismatch(f"ConvLSTM2D expects (S, H, W, C). Got {in_shape}")
        s, h, w, c = in_shape
        f = self.filters
        self.xop = Conv2DOp((h, w), self.kernel, padding=self.padding)
        self.hop = Conv2DOp((h, w), self.kernel, padding=self.padding)
        if self.hop.out_hw != (h, w):
            raise ShapeMismatch(f"Padding {self.padding} must preserve the map extent {(h, w)}")
        kh, kw = self.xop.kernel
        self.weights["Kx"] = glorot(rng, (kh, kw, c, 4 * f), kh * kw * c, kh * kw * f)
        self.weights["Kh"] = glorot(rng, (kh, kw, f, 4 * f), kh * kw * f, kh * kw * f)
        b = np.zeros(4 * f, dtype=DTYPE)
        b[f : 2 * f] = 1.0
        self.weights["b"] = b
        return (s, h, w, f) if self.return_sequences else (h, w, f)

    def step(self, x_t, h, c):
        f = self.filters
        zero = np.zeros(4 * f, dtype=DTYPE)
        ax, _ = self.xop.forward(x_t, self.weights["Kx"], self.weights["b"])
        ah, _ = self.hop.forward(h, self.weights["Kh"], zero)
        a = ax + ah
        i = sigmoid(a[..., :f])
        fg = sigmoid(a[..., f : 2 * f])
        g = np.tanh(a[..., 2 * f : 3 * f])
        o = sigmoid(a[..., 3 * f :])
        c = fg * c + i * g
        return o * np.tanh(c), c

    def forward(self, x):
        self.check_input(x)
        n, s, hh, ww, _ = x.shape
        h = np.zeros((n, hh, ww, self.filters), dtype=DTYPE)
        c = np.zeros_like(h)
        hs = []
        for seg in range(s):
            h, c = self.step(x[:, seg], h, c)
            hs.append(h)
        return np.stack(hs, axis=1) if self.return_sequences else h

    def backward(self, dy):
        raise GraphContainsForwardOnlyLayer(f"{self!r} is forward-only and cannot be trained")
