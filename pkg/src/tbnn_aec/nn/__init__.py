"""Minimal deterministic float32 inference runtime for the post-filter graphs."""

from .layers import (FTLSTM, GRU, LSTM, Activation, BatchNorm, Conv1x1, Conv2d, ConvBnAct,
                     Dropout, GConv, Linear, PReLU, TrConv2d, UNetBlock, conv_out_bins)
from .manifest import WeightManifest, load_manifest, seed_init
from .module import DTYPE, Module, ParamSpec

__all__ = [
    "Activation", "BatchNorm", "Conv1x1", "Conv2d", "ConvBnAct", "DTYPE", "Dropout", "FTLSTM",
    "GConv", "GRU", "LSTM", "Linear", "Module", "PReLU", "ParamSpec", "TrConv2d", "UNetBlock",
    "WeightManifest", "conv_out_bins", "load_manifest", "seed_init",
]
