#!/usr/bin/env python
"""
Causality and receptive field of stacked WaveNet blocks
"""

import os, sys

import numpy as np
import pytest

import testutils

from bxs.nnkit import WaveNetBlock, WaveNetStack, wavenet_block, receptive_field
from bxs.nnkit.ops import ShapeMismatch

CHANNELS = 3


def stack(kernel, depth, length, seed=0):
    rng = np.random.default_rng(seed)
    blocks = []
    for n in range(1, depth + 1):
        block = WaveNetBlock(CHANNELS, kernel=(kernel, 1), dilation=kernel**n)
        block.build((length, 1, CHANNELS), rng)
        blocks.append(block)
    return blocks


def skip_sum(blocks, x):
    h, skip = x, None
    for block in blocks:
        h, skip = wavenet_block(block, h, skip)
    return skip


def test_receptive_field():
    assert receptive_field(2, 1) == 3
    assert receptive_field(2, 3) == 15
    assert receptive_field(3, 1) == 7
    assert receptive_field(3, 4) == 241


@pytest.mark.parametrize(
    "kernel,depth", [(2, 1), (2, 2), (2, 3), (2, 4), (3, 1), (3, 2), (3, 3), (3, 4)]
)
def test_causal_reach(kernel, depth):
    R = receptive_field(kernel, depth)
    T = R + 4
    blocks = stack(kernel, depth, T)
    rng = np.random.default_rng(depth)
    x = rng.normal(size=(1, T, 1, CHANNELS))
    base = skip_sum(blocks, x)

    # The first input reaches exactly R - 1 steps ahead
    moved = x.copy()
    moved[:, 0] += 1.0
    out = skip_sum(blocks, moved)
    assert not np.allclose(out[:, R - 1], base[:, R - 1])
    assert np.allclose(out[:, R:], base[:, R:], atol=1e-12)

    # Nothing flows backwards in time
    mid = T // 2
    moved = x.copy()
    moved[:, mid] += 1.0
    out = skip_sum(blocks, moved)
    assert np.allclose(out[:, :mid], base[:, :mid], atol=1e-12)
    assert not np.allclose(out[:, mid], base[:, mid])


def test_stack_shapes():
    rng = np.random.default_rng(0)
    layer = WaveNetStack(filters=4, kernel=(2, 3), depth=2, roll=True)
    assert layer.build((16, 9, 1), rng) == (16, 9, 4)
    y = layer.forward(rng.normal(size=(2, 16, 9, 1)))
    assert y.shape == (2, 16, 9, 4)
    assert (y >= 0).all()
    assert [b.dilation for b in layer.blocks] == [2, 4]

    with pytest.raises(ShapeMismatch):
        WaveNetBlock(4).build((16, 1, 3), rng)


if __name__ == "__main__":
    test_receptive_field()
    test_causal_reach(2, 3)
    test_causal_reach(3, 4)
    test_stack_shapes()

    print("=" * 50)
    print(" All Passed ".center(50, "="))
    print("=" * 50)
