"""
Sequential container and the named architectures.

Inputs are (T, V) example matrices (128 time steps x 9 indicators by default)
and every model ends in a softmax over the classes.
"""

import logging

import numpy as np

from .layers import (
    Conv2D,
    Dense,
    Softmax,
    Reshape,
    Flatten,
    GlobalAveragePool,
    Pool2D,
    layer_from_config,
)
from .recurrent import LSTM, ConvLSTM2D
from .attention import SoftAttention, ConvAttention, ConvAttention2D, ContextSum
from .wavenet import WaveNetStack
from .ops import DTYPE, ShapeMismatch

logger = logging.getLogger(__name__)


class Sequential:
    def __init__(self, layers, name=None, options=None):
        self.layers = list(layers)
        self.name = name
        self.options = dict(options or {})
        self.input_shape = None

    def build(self, input_shape, seed=1):
        rng = np.random.default_rng(seed)
        self.input_shape = tuple(input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.build(shape, rng)
        self.output_shape = shape
        return self

    def forward(self, x):
        x = np.asarray(x, dtype=DTYPE)
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self):
        out = {}
        for ii, layer in enumerate(self.layers):
            out.update({f"{ii}.{k}": v for k, v in layer.params().items()})
        return out

    def grads(self):
        out = {}
        for ii, layer in enumerate(self.layers):
            out.update({f"{ii}.{k}": v for k, v in layer.grads().items()})
        return out

    def set_params(self, values):
        by_layer = {}
        for key, value in values.items():
            ii, _, rest = key.partition(".")
            by_layer.setdefault(int(ii), {})[rest] = value
        for ii, vals in by_layer.items():
            self.layers[ii].set_params(vals)

    def n_params(self):
        return sum(v.size for v in self.params().values())

    def is_forward_only(self):
        return any(layer.is_forward_only() for layer in self.layers)

    def predict_proba(self, x, batch_size=256):
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim == len(self.input_shape):
            return self.predict_proba(x[None], batch_size)[0]
        outs = [self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def predict(self, x):
        return np.argmax(self.predict_proba(x), axis=-1)

    def layer_configs(self):
        return [{"type": type(layer).__name__, "config": layer.config()} for layer in self.layers]

    @classmethod
    def from_configs(cls, configs, name=None, options=None):
        return cls([layer_from_config(c["type"], c["config"]) for c in configs], name=name, options=options)

    def summary(self):
        rows = []
        shape = self.input_shape
        for layer in self.layers:
            n = sum(v.size for v in layer.params().values())
            rows.append(f"{type(layer).__name__:<20} {str(shape):>16} -> {str(layer.out_shape):<16} {n:>8}")
            shape = layer.out_shape
        return "\n".join(rows)


def _segment_shape(input_shape, segments):
    t, v = input_shape
    if t % segments:
        raise ShapeMismatch(f"{t} time steps do not split into {segments} segments")
    return (segments, t // segments, v)


def _head(n_classes, hidden=None):
    layers = []
    if hidden:
        layers.append(Dense(hidden, activation="relu"))
    return layers + [Dense(n_classes), Softmax()]


def _cnn(input_shape, n_classes, roll=False, filters=(8, 16), kernel=(3, 3), pool=(2, 1), dense=32):
    t, v = input_shape
    padding = ("same", "roll" if roll else "same")
    layers = [Reshape((t, v, 1))]
    for f in filters:
        layers += [Conv2D(f, kernel, padding=padding, activation="relu"), Pool2D(pool, mode="max")]
    return layers + [Flatten()] + _head(n_classes, dense)


def _recurrent(units=(50, 20, 5), bidirectional=True, sequences=False):
    units = list(units)
    layers = [LSTM(u, return_sequences=True, bidirectional=bidirectional) for u in units[:-1]]
    layers.append(LSTM(units[-1], return_sequences=sequences, bidirectional=bidirectional))
    return layers


def _lstm(input_shape, n_classes, **options):
    return _recurrent(**options) + _head(n_classes)


ATTENTION_PLACES = ("before", "after")


def _attended_lstm(n_classes, att, attention="before", **options):
    """
    `attention="before"` weighs the raw variables. `"after"` keeps every
    recurrent layer's sequences, weighs those and sums them over time.
    """
    if attention == "before":
        return [att] + _recurrent(**options) + _head(n_classes)
    if attention == "after":
        return _recurrent(sequences=True, **options) + [att, ContextSum()] + _head(n_classes)
    raise ValueError(f"attention must be one of {ATTENTION_PLACES}. Got {attention!r}")


def _lstm_att(input_shape, n_classes, **options):
    return _attended_lstm(n_classes, SoftAttention(), **options)


def _lstm_convatt(input_shape, n_classes, hidden=(4,), att_kernel=3, reducer="conv", final_filters=1, **options):
    att = ConvAttention(hidden, att_kernel, reducer=reducer, final_filters=final_filters)
    return _attended_lstm(n_classes, att, **options)


def _convlstm(input_shape, n_classes, segments=8, filters=4, kernel=(3, 3), attention=False, att_kernel=(1, 3)):
    s, st, v = _segment_shape(input_shape, segments)
    layers = [Reshape((s, st, v))]
    if attention:
        layers.append(ConvAttention2D(kernel=att_kernel, roll_on_segments=True))
    layers += [
        Reshape((s, st, v, 1)),
        ConvLSTM2D(filters, kernel, padding=("same", "roll")),
        Flatten(),
    ]
    return layers + _head(n_classes)


def _wavenet(input_shape, n_classes, two_d=False, filters=8, kernel=2, kernel_w=3, depth=3, stride=2):
    t, v = input_shape
    if two_d:
        layers = [Reshape((t, v, 1)), WaveNetStack(filters, (kernel, kernel_w), depth, roll=True)]
        final = Conv2D(n_classes, (kernel, kernel_w), stride=(stride, 1), padding=("causal", "roll"))
    else:
        layers = [Reshape((t, 1, v)), WaveNetStack(filters, (kernel, 1), depth)]
        final = Conv2D(n_classes, (kernel, 1), stride=(stride, 1), padding=("causal", "valid"))
    return layers + [final, GlobalAveragePool(), Softmax()]


ARCHITECTURES = {
    "cnn": lambda s, n, **o: _cnn(s, n, **o),
    "cnn-roll": lambda s, n, **o: _cnn(s, n, roll=True, **o),
    "lstm": lambda s, n, **o: _lstm(s, n, **o),
    "lstm-att": lambda s, n, **o: _lstm_att(s, n, **o),
    "lstm-convatt": lambda s, n, **o: _lstm_convatt(s, n, **o),
    "convlstm2d": lambda s, n, **o: _convlstm(s, n, **o),
    "convlstm2d-att": lambda s, n, **o: _convlstm(s, n, attention=True, **o),
    "wavenet": lambda s, n, **o: _wavenet(s, n, **o),
    "wavenet2d-roll": lambda s, n, **o: _wavenet(s, n, two_d=True, **o),
}


def build(name, input_shape=(128, 9), n_classes=5, seed=1, **options):
    """Build and initialize a named architecture"""
    if name not in ARCHITECTURES:
        raise ValueError(f"Unknown architecture {name!r}. Options: {sorted(ARCHITECTURES)}")
    layers = ARCHITECTURES[name](tuple(input_shape), n_classes, **options)
    model = Sequential(layers, name=name, options=options)
    return model.build(input_shape, seed=seed)


class FixedModel:
    """Constant class probabilities regardless of the input"""

    name = "fixed"

    def __init__(self, probabilities):
        p = np.asarray(probabilities, dtype=DTYPE)
        if p.ndim != 1 or (p < 0).any() or not np.isclose(p.sum(), 1.0):
            raise ValueError(f"Probabilities must be a non-negative vector summing to 1. Got {probabilities!r}")
        self.probabilities = p

    def is_forward_only(self):
        return True

    def predict_proba(self, x, batch_size=None):
        x = np.asarray(x)
        if x.ndim <= 2:
            return self.probabilities.copy()
        return np.tile(self.probabilities, (len(x), 1))

    def predict(self, x):
        return np.argmax(self.predict_proba(x), axis=-1)
