"""Single-frame numeric kernels (float32).

Tensors are per-frame ``(channels, bins)`` arrays.  Time kernels of height
two use the previous and the current frame; index 0 of the kernel's time
axis multiplies the previous frame.
"""

import numpy as np
from scipy.special import expit

sliding = np.lib.stride_tricks.sliding_window_view


def sigmoid(x):
    return expit(x)


def tanh(x):
    return np.tanh(x)


def elu(x, alpha=1.0):
    return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0)))


def prelu(x, slope):
    slope = np.asarray(slope, dtype=x.dtype)
    if x.ndim == 2 and slope.ndim == 1:
        slope = slope[:, None]
    return np.where(x >= 0, x, slope * x)


def conv_patches(frames, kf, stride, pad):
    """Im2col over the frequency axis.

    ``frames`` is ``(cin, kt, bins)``; returns ``(cin*kt*kf, out_bins)``.
    """
    if pad[0] or pad[1]:
        frames = np.pad(frames, ((0, 0), (0, 0), pad))
    win = sliding(frames, kf, axis=2)[:, :, ::stride, :]
    cin, kt, fo, _ = win.shape
    return win.transpose(0, 1, 3, 2).reshape(cin * kt * kf, fo)


def conv_frame(frames, w2, b, kf, stride, pad):
    return w2 @ conv_patches(frames, kf, stride, pad) + b[:, None]


def tconv_frame(frames, m, b, kf, stride, out_bins):
    """Transposed convolution of ``(kt*cin, bins)`` stacked frames.

    ``m`` is ``(kf*cout, kt*cin)``.  Output positions past the full
    ``(bins-1)*stride + kf`` extent receive only the bias.
    """
    fin = frames.shape[1]
    z = (m @ frames).reshape(kf, -1, fin)
    cout = z.shape[1]
    full = (fin - 1) * stride + kf
    out = np.zeros((cout, max(full, out_bins)), dtype=frames.dtype)
    for j in range(kf):
        out[:, j:j + stride * (fin - 1) + 1:stride] += z[j]
    out = out[:, :out_bins]
    out += b[:, None]
    return out


def gru_cell(x, h, w_ih, w_hh, b_ih, b_hh):
    """PyTorch-convention GRU step; ``x`` (batch, in) or (in,)."""
    gi = x @ w_ih.T + b_ih
    gh = h @ w_hh.T + b_hh
    hs = h.shape[-1]
    r = expit(gi[..., :hs] + gh[..., :hs])
    z = expit(gi[..., hs:2 * hs] + gh[..., hs:2 * hs])
    n = np.tanh(gi[..., 2 * hs:] + r * gh[..., 2 * hs:])
    return (1 - z) * n + z * h


def lstm_gates(g, c):
    hs = c.shape[-1]
    i = expit(g[..., :hs])
    f = expit(g[..., hs:2 * hs])
    gg = np.tanh(g[..., 2 * hs:3 * hs])
    o = expit(g[..., 3 * hs:])
    c_new = f * c + i * gg
    return o * np.tanh(c_new), c_new


def lstm_cell(x, h, c, w_ih, w_hh, b_ih, b_hh):
    """PyTorch-convention LSTM step (gate order i, f, g, o)."""
    g = x @ w_ih.T + b_ih + h @ w_hh.T + b_hh
    return lstm_gates(g, c)
