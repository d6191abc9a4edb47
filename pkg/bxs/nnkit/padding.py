"""
Padding as index maps.

Every method is expressed as an integer array of source positions along one
axis, -1 meaning "fill with a constant". Forward padding is a take; the
backward pass scatters gradients back onto the source positions with
np.add.at, so copied borders (wrap, roll, reflect, tile) accumulate onto the
columns they were copied from.

For the input "abcdef" and a width of 4:

    valid       abcdef
    same        0000|abcdef|0000
    constant    nnnn|abcdef|nnnn
    reflect     dcba|abcdef|fedc
    reflect101  edcb|abcdef|edcb
    tile (2)    abab|abcdef|efef
    causal      0000|abcdef
    wrap        cdef|abcdef|abcd
    roll        wrap, applied to the variables axis only
"""

import logging
from enum import Enum

import numpy as np

logger = logging.getLogger(__name__)


class PadWiderThanInput(ValueError):
    pass


class EvenRollKernel(ValueError):
    pass


class PadMethod(str, Enum):
    VALID = "valid"
    SAME = "same"
    CONSTANT = "constant"
    REFLECT = "reflect"
    REFLECT101 = "reflect101"
    TILE = "tile"
    CAUSAL = "causal"
    WRAP = "wrap"
    ROLL = "roll"

    @property
    def fills(self):
        return self in {PadMethod.SAME, PadMethod.CONSTANT, PadMethod.CAUSAL, PadMethod.VALID}


def pad_widths(method, span):
    """
    (before, after) for a kernel covering `span` input positions (dilation
    included) so the output keeps its extent at stride 1.
    """
    method = PadMethod(method)
    if method is PadMethod.VALID:
        return 0, 0
    if method is PadMethod.CAUSAL:
        return span - 1, 0
    if method is PadMethod.ROLL and span % 2 == 0:
        raise EvenRollKernel(f"Roll padding needs an odd kernel extent. Got {span}")
    return (span - 1) // 2, span // 2


def pad_indices(n, before, after, method, tile=2):
    """Source index for each padded position; -1 is a constant fill"""
    method = PadMethod(method)
    core = np.arange(n)
    if method.fills:
        return np.concatenate([np.full(before, -1), core, np.full(after, -1)]).astype(int)

    if method is PadMethod.REFLECT101:
        limit = n - 1
    elif method is PadMethod.TILE:
        limit = n
        if tile > n:
            raise PadWiderThanInput(f"Tile of {tile} wider than input of {n}")
    else:
        limit = n
    if max(before, after) > limit:
        raise PadWiderThanInput(
            f"{method.value} padding of ({before}, {after}) is wider than the input extent {n}"
        )

    p_before = np.arange(before)
    p_after = np.arange(after)
    if method is PadMethod.REFLECT:
        left, right = before - 1 - p_before, n - 1 - p_after
    elif method is PadMethod.REFLECT101:
        left, right = before - p_before, n - 2 - p_after
    elif method is PadMethod.TILE:
        left, right = (p_before - before) % tile, n - tile + p_after % tile
    else:  # wrap / roll
        left, right = n - before + p_before, p_after
    return np.concatenate([left, core, right]).astype(int)


def take_padded(x, axis, idx, value=0):
    """Apply an index map along an axis"""
    out = np.take(x, np.clip(idx, 0, None), axis=axis)
    if (idx < 0).any():
        out = np.array(out, copy=True)
        sl = [slice(None)] * out.ndim
        sl[axis] = np.flatnonzero(idx < 0)
        out[tuple(sl)] = value
    return out


def scatter_padded(dy, axis, idx, n):
    """Backward of take_padded: accumulate onto the n source positions"""
    dy = np.moveaxis(dy, axis, 0)
    out = np.zeros((n,) + dy.shape[1:], dtype=dy.dtype)
    keep = idx >= 0
    np.add.at(out, idx[keep], dy[keep])
    return np.moveaxis(out, 0, axis)


def pad(x, method, width, axis=-1, value=0, tile=2):
    """
    Pad one axis of any array (numbers or characters) by `width` on each side
    (left only for causal).

        >>> "".join(pad(np.array(list("abcdef")), "wrap", 4))
        'cdefabcdefabcd'
    """
    x = np.asarray(x)
    method = PadMethod(method)
    axis = axis % x.ndim
    if method is PadMethod.VALID:
        return x
    before = width
    after = 0 if method is PadMethod.CAUSAL else width
    idx = pad_indices(x.shape[axis], before, after, method, tile=tile)
    return take_padded(x, axis, idx, value=value)


class AxisPad:
    """Precomputed padding of one spatial axis for a given kernel span"""

    def __init__(self, method, span, n, value=0, tile=2):
        self.method = PadMethod(method)
        self.before, self.after = pad_widths(self.method, span)
        self.n = n
        self.value = value
        self.idx = pad_indices(n, self.before, self.after, self.method, tile=tile)

    @property
    def padded(self):
        return len(self.idx)

    def forward(self, x, axis):
        if self.method is PadMethod.VALID:
            return x
        return take_padded(x, axis, self.idx, self.value)

    def backward(self, dy, axis):
        if self.method is PadMethod.VALID:
            return dy
        return scatter_padded(dy, axis, self.idx, self.n)
