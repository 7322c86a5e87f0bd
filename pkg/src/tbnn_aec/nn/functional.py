"""Whole-utterance versions of the layers: tensors are ``(channels, frames, bins)``.

Each function builds the corresponding layer, binds the given weights and
runs it frame by frame, so whole-utterance and streaming evaluation share a
single code path.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from . import kernels as K
from .layers import FTLSTM, GRU, BatchNorm, Conv2d, Dropout, TrConv2d, UNetBlock
from .module import DTYPE


def _as_ctf(x, channels=None, where="input"):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 3:
        raise ContractError(f"{where}: expected (channels, frames, bins), got {x.shape}")
    if channels is not None and x.shape[0] != channels:
        raise ContractError(f"{where}: expected {channels} channels, got {x.shape[0]}")
    return x


def run_frames(layer, x, state=None):
    state = layer.init_state() if state is None else state
    out = [layer.step(np.ascontiguousarray(x[:, t, :]), state) for t in range(x.shape[1])]
    return np.stack(out, axis=1), state


def _named(prefix, weight, bias):
    return {f"{prefix}.weight": weight, f"{prefix}.bias": bias}


def conv2d(x, weight, bias=None, stride=(1, 2), freq_pad=(0, 0)):
    weight = np.asarray(weight, DTYPE)
    cout, cin, kt, kf = weight.shape
    x = _as_ctf(x, cin, "conv2d")
    bias = np.zeros(cout, DTYPE) if bias is None else bias
    layer = Conv2d("conv", cin, cout, x.shape[2], (kt, kf), stride, freq_pad)
    layer.bind(_named("conv", weight, bias))
    return run_frames(layer, x)[0]


def gconv(x, weight, bias=None, stride=(1, 2)):
    weight = np.asarray(weight, DTYPE)
    if weight.shape[0] % 2:
        raise ContractError(f"gconv needs an even output-channel count, got {weight.shape[0]}")
    return _gate(conv2d(x, weight, bias, stride))


def _gate(y):
    c = y.shape[0] // 2
    return y[:c] * K.sigmoid(y[c:])


def tconv2d(x, weight, bias=None, stride=(1, 2), out_bins=None):
    """Causal transposed convolution; ``weight`` is ``(cin, cout, kt, kf)``."""
    weight = np.asarray(weight, DTYPE)
    cin, cout, kt, kf = weight.shape
    x = _as_ctf(x, cin, "tconv2d")
    full = (x.shape[2] - 1) * stride[1] + kf
    out_bins = full if out_bins is None else out_bins
    bias = np.zeros(cout, DTYPE) if bias is None else bias
    layer = TrConv2d("tconv", cin, cout, x.shape[2], out_bins, (kt, kf), stride)
    layer.bind(_named("tconv", weight, bias))
    return run_frames(layer, x)[0]


def gru_forward(seq, weights, hidden=None):
    """Run a GRU over ``seq`` (frames, features); returns ``(outputs, h_last)``.

    ``weights`` maps ``weight_ih``, ``weight_hh``, ``bias_ih``, ``bias_hh``.
    """
    seq = np.asarray(seq, DTYPE)
    hs = np.shape(weights["weight_hh"])[1]
    layer = GRU("gru", seq.shape[1], hs)
    layer.bind({f"gru.{k}": v for k, v in weights.items()})
    state = layer.init_state()
    if hidden is not None:
        hidden = np.asarray(hidden, DTYPE)
        if hidden.shape != (hs,):
            raise ContractError(f"hidden state must have shape ({hs},), got {hidden.shape}")
        state["h"] = hidden
    out = np.stack([layer.step(seq[t], state) for t in range(seq.shape[0])])
    return out, state["h"]


def ftlstm_forward(x, weights, freq_hidden=128, time_hidden=128):
    x = _as_ctf(x, where="ftlstm")
    layer = FTLSTM("ftlstm", x.shape[0], x.shape[2], freq_hidden, time_hidden)
    layer.bind({f"ftlstm.{k}": v for k, v in weights.items()})
    return run_frames(layer, x)[0]


def unet_block(x, weights, depth=2):
    x = _as_ctf(x, where="unet_block")
    layer = UNetBlock("unet", x.shape[0], x.shape[2], depth)
    layer.bind({f"unet.{k}": v for k, v in weights.items()})
    return run_frames(layer, x)[0]


def batchnorm_inference(x, gamma, beta, mean, var, eps=1e-5):
    x = np.asarray(x, DTYPE)
    layer = BatchNorm("bn", x.shape[0])
    layer.eps = eps
    layer.bind({"bn.weight": gamma, "bn.bias": beta, "bn.running_mean": mean,
                "bn.running_var": var})
    shape = (-1,) + (1,) * (x.ndim - 1)
    return x * layer._scale.reshape(shape) + layer._shift.reshape(shape)


def prelu(x, slope):
    x = np.asarray(x, DTYPE)
    slope = np.asarray(slope, DTYPE)
    if slope.ndim == 1 and x.ndim > 1 and slope.size > 1:
        slope = slope.reshape((-1,) + (1,) * (x.ndim - 1))
    return np.where(x >= 0, x, slope * x)


def elu(x, alpha=1.0):
    return K.elu(np.asarray(x, DTYPE), alpha)


def dropout(x, rate=0.25, training=False, seed=0):
    x = np.asarray(x, DTYPE)
    layer = Dropout("dropout", rate, training, seed)
    return layer.step(x, layer.init_state())
