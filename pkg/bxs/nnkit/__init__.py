"""
nnkit: a small numpy neural-network kernel. Float64, batch-first,
channels-last, every trainable layer with an analytic backward pass.
"""

import logging

from .padding import PadMethod, PadWiderThanInput, EvenRollKernel, pad
from .ops import ShapeMismatch, softmax, conv_forward
from .layers import Conv1D, Conv2D, Dense, Softmax, Permute, Reshape, Flatten, GlobalAveragePool, Pool2D
from .recurrent import LSTM, ConvLSTM2D, lstm_step
from .attention import (
    SoftAttention,
    ConvAttention,
    ConvAttention2D,
    ContextSum,
    HeadOutputNotSingleChannel,
    apply_attention,
)
from .wavenet import WaveNetBlock, WaveNetStack, wavenet_block, receptive_field
from .models import Sequential, FixedModel, build, ARCHITECTURES
from .train import fit, GraphContainsForwardOnlyLayer

logger = logging.getLogger(__name__)
