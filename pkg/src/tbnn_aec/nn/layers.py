"""Layer set of the post-filter graphs, evaluated frame by frame.

Every layer is causal: a frame's output depends only on that frame and the
past, carried in the per-stream state.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, ContractError
from . import kernels as K
from .module import DTYPE, Module, ParamSpec, check_shape


def conv_out_bins(bins, kf, stride, pad=(0, 0)):
    return (bins + pad[0] + pad[1] - kf) // stride + 1


class Conv2d(Module):
    kind = "Conv2d"

    def __init__(self, name, cin, cout, in_bins, kernel=(2, 3), stride=(1, 2), freq_pad=(0, 0)):
        super().__init__(name)
        if stride[0] != 1:
            raise ConfigurationError("time stride must be 1 for streaming")
        self.cin, self.cout, self.in_bins = cin, cout, in_bins
        self.kernel, self.stride, self.freq_pad = tuple(kernel), tuple(stride), tuple(freq_pad)
        self.out_bins = conv_out_bins(in_bins, kernel[1], stride[1], freq_pad)
        if self.out_bins < 1:
            raise ConfigurationError(f"{name}: {in_bins} bins too few for kernel {kernel}")

    def hparams(self):
        return {"cin": self.cin, "cout": self.cout, "kernel": list(self.kernel),
                "stride": list(self.stride), "freq_pad": list(self.freq_pad),
                "in_bins": self.in_bins, "out_bins": self.out_bins}

    def _own_params(self):
        kt, kf = self.kernel
        fan = self.cin * kt * kf
        return [ParamSpec(f"{self.name}.weight", (self.cout, self.cin, kt, kf), "uniform", fan),
                ParamSpec(f"{self.name}.bias", (self.cout,), "uniform", fan)]

    def _prepare(self):
        self._w2 = np.ascontiguousarray(self.params["weight"].reshape(self.cout, -1))

    def init_state(self):
        return np.zeros((self.cin, self.kernel[0] - 1, self.in_bins), DTYPE)

    def step(self, x, state):
        check_shape(x, (self.cin, self.in_bins), self.name)
        frames = np.concatenate([state, x[:, None, :]], axis=1)
        y = K.conv_frame(frames, self._w2, self.params["bias"], self.kernel[1],
                         self.stride[1], self.freq_pad)
        state[...] = frames[:, 1:, :]
        return self._check(y)


class Conv1x1(Conv2d):
    """1x1 convolution (skip paths)."""

    kind = "SkipConv1x1"

    def __init__(self, name, cin, cout, bins):
        super().__init__(name, cin, cout, bins, kernel=(1, 1), stride=(1, 1))

    def step(self, x, state=None):
        check_shape(x, (self.cin, self.in_bins), self.name)
        return self._check(self._w2 @ x + self.params["bias"][:, None])


class GConv(Module):
    """Gated convolution: one conv with ``2*cout`` channels, value * sigmoid(gate)."""

    kind = "GConv"

    def __init__(self, name, cin, cout, in_bins, kernel=(2, 3), stride=(1, 2)):
        super().__init__(name)
        self.cout = cout
        self.conv = self.add("conv", Conv2d(f"{name}.conv", cin, 2 * cout, in_bins, kernel, stride))
        self.in_bins, self.out_bins = in_bins, self.conv.out_bins

    def hparams(self):
        return {"cout": self.cout}

    def step(self, x, state):
        y = self.conv.step(x, state["conv"])
        return self._check(gate(y))


def gate(y):
    if y.shape[0] % 2:
        raise ContractError(f"gated conv needs an even channel count, got {y.shape[0]}")
    c = y.shape[0] // 2
    return y[:c] * K.sigmoid(y[c:])


class TrConv2d(Module):
    kind = "TrConv2d"

    def __init__(self, name, cin, cout, in_bins, out_bins, kernel=(2, 3), stride=(1, 2)):
        super().__init__(name)
        self.cin, self.cout, self.in_bins, self.out_bins = cin, cout, in_bins, out_bins
        self.kernel, self.stride = tuple(kernel), tuple(stride)
        full = (in_bins - 1) * stride[1] + kernel[1]
        if out_bins > full + 1 or out_bins < 1:
            raise ConfigurationError(f"{name}: cannot map {in_bins} bins to {out_bins}")

    def hparams(self):
        return {"cin": self.cin, "cout": self.cout, "kernel": list(self.kernel),
                "stride": list(self.stride), "in_bins": self.in_bins, "out_bins": self.out_bins}

    def _own_params(self):
        kt, kf = self.kernel
        fan = self.cin * kt * kf
        return [ParamSpec(f"{self.name}.weight", (self.cin, self.cout, kt, kf), "uniform", fan),
                ParamSpec(f"{self.name}.bias", (self.cout,), "uniform", fan)]

    def _prepare(self):
        kt, kf = self.kernel
        w = self.params["weight"]
        self._m = np.ascontiguousarray(w.transpose(3, 1, 2, 0).reshape(kf * self.cout, kt * self.cin))

    def init_state(self):
        return np.zeros(((self.kernel[0] - 1) * self.cin, self.in_bins), DTYPE)

    def step(self, x, state):
        check_shape(x, (self.cin, self.in_bins), self.name)
        frames = np.concatenate([state, x], axis=0)
        y = K.tconv_frame(frames, self._m, self.params["bias"], self.kernel[1],
                          self.stride[1], self.out_bins)
        state[...] = frames[self.cin:]
        return self._check(y)


class BatchNorm(Module):
    kind = "BatchNorm"
    eps = 1e-5

    def __init__(self, name, channels):
        super().__init__(name)
        self.channels = channels

    def hparams(self):
        return {"channels": self.channels, "eps": self.eps}

    def _own_params(self):
        c = (self.channels,)
        return [ParamSpec(f"{self.name}.weight", c, "ones"),
                ParamSpec(f"{self.name}.bias", c, "zeros"),
                ParamSpec(f"{self.name}.running_mean", c, "zeros"),
                ParamSpec(f"{self.name}.running_var", c, "ones")]

    def _prepare(self):
        p = self.params
        scale = p["weight"] / np.sqrt(p["running_var"] + DTYPE(self.eps))
        self._scale = scale.astype(DTYPE)[:, None]
        self._shift = (p["bias"] - p["running_mean"] * scale).astype(DTYPE)[:, None]

    def init_state(self):
        return None

    def step(self, x, state=None):
        return self._check(x * self._scale + self._shift)


class PReLU(Module):
    kind = "PReLU"

    def __init__(self, name, channels):
        super().__init__(name)
        self.channels = channels

    def hparams(self):
        return {"channels": self.channels}

    def _own_params(self):
        return [ParamSpec(f"{self.name}.weight", (self.channels,), "prelu")]

    def init_state(self):
        return None

    def step(self, x, state=None):
        return K.prelu(x, self.params["weight"])


class Activation(Module):
    """Parameter-free elementwise nonlinearity (ELU, Sigmoid, Tanh)."""

    _fns = {"ELU": K.elu, "Sigmoid": K.sigmoid, "Tanh": K.tanh}

    def __init__(self, name, kind):
        super().__init__(name)
        self.kind = kind
        self._fn = self._fns[kind]

    def init_state(self):
        return None

    def step(self, x, state=None):
        return self._fn(x)


class Dropout(Module):
    """Identity at inference; Bernoulli mask-and-scale when ``training``.

    Training-mode state carries a seeded generator so runs are reproducible.
    """

    kind = "Dropout"

    def __init__(self, name, rate, training=False, seed=0):
        super().__init__(name)
        self.rate, self.training, self.seed = rate, training, seed

    def hparams(self):
        return {"rate": self.rate}

    def init_state(self):
        return np.random.default_rng(self.seed) if self.training else None

    def step(self, x, state=None):
        if not self.training or self.rate == 0:
            return x
        keep = 1.0 - self.rate
        mask = state.random(x.shape) < keep
        return (x * mask / DTYPE(keep)).astype(x.dtype)


class Linear(Module):
    kind = "Linear"

    def __init__(self, name, fin, fout, pointwise=False):
        super().__init__(name)
        self.fin, self.fout, self.pointwise = fin, fout, pointwise
        if pointwise:
            self.kind = "PointwiseConv1d"

    def hparams(self):
        return {"in": self.fin, "out": self.fout}

    def _own_params(self):
        shape = (self.fout, self.fin, 1) if self.pointwise else (self.fout, self.fin)
        return [ParamSpec(f"{self.name}.weight", shape, "uniform", self.fin),
                ParamSpec(f"{self.name}.bias", (self.fout,), "uniform", self.fin)]

    def _prepare(self):
        self._wt = np.ascontiguousarray(self.params["weight"].reshape(self.fout, self.fin).T)

    def init_state(self):
        return None

    def step(self, x, state=None):
        """``x`` is ``(..., fin)``."""
        return self._check(x @ self._wt + self.params["bias"])


class GRU(Module):
    kind = "GRU"

    def __init__(self, name, fin, hidden):
        super().__init__(name)
        self.fin, self.hidden = fin, hidden

    def hparams(self):
        return {"in": self.fin, "hidden": self.hidden}

    def _own_params(self):
        h = self.hidden
        return [ParamSpec(f"{self.name}.weight_ih", (3 * h, self.fin), "uniform", h),
                ParamSpec(f"{self.name}.weight_hh", (3 * h, h), "uniform", h),
                ParamSpec(f"{self.name}.bias_ih", (3 * h,), "uniform", h),
                ParamSpec(f"{self.name}.bias_hh", (3 * h,), "uniform", h)]

    def _prepare(self):
        p = self.params
        self._w_ih_t = np.ascontiguousarray(p["weight_ih"].T)
        self._w_hh_t = np.ascontiguousarray(p["weight_hh"].T)

    def init_state(self, batch=None):
        shape = (self.hidden,) if batch is None else (batch, self.hidden)
        return {"h": np.zeros(shape, DTYPE)}

    def step(self, x, state):
        if x.shape[-1] != self.fin:
            raise ContractError(f"{self.name}: expected {self.fin} input features, got {x.shape[-1]}")
        if state["h"].shape[-1] != self.hidden:
            raise ContractError(f"{self.name}: hidden size mismatch")
        p = self.params
        h = state["h"]
        hs = self.hidden
        gi = x @ self._w_ih_t + p["bias_ih"]
        gh = h @ self._w_hh_t + p["bias_hh"]
        r = K.sigmoid(gi[..., :hs] + gh[..., :hs])
        z = K.sigmoid(gi[..., hs:2 * hs] + gh[..., hs:2 * hs])
        n = np.tanh(gi[..., 2 * hs:] + r * gh[..., 2 * hs:])
        h = (1 - z) * n + z * h
        state["h"] = h
        return self._check(h)


class LSTM(Module):
    kind = "LSTM"

    def __init__(self, name, fin, hidden):
        super().__init__(name)
        self.fin, self.hidden = fin, hidden

    def hparams(self):
        return {"in": self.fin, "hidden": self.hidden}

    def _own_params(self):
        h = self.hidden
        return [ParamSpec(f"{self.name}.weight_ih", (4 * h, self.fin), "uniform", h),
                ParamSpec(f"{self.name}.weight_hh", (4 * h, h), "uniform", h),
                ParamSpec(f"{self.name}.bias_ih", (4 * h,), "uniform", h),
                ParamSpec(f"{self.name}.bias_hh", (4 * h,), "uniform", h)]

    def _prepare(self):
        p = self.params
        self._w_ih_t = np.ascontiguousarray(p["weight_ih"].T)
        self._w_hh_t = np.ascontiguousarray(p["weight_hh"].T)

    def input_gates(self, x):
        return x @ self._w_ih_t + self.params["bias_ih"]

    def recur(self, gi, h, c):
        g = gi + (h @ self._w_hh_t + self.params["bias_hh"])
        return K.lstm_gates(g, c)

    def init_state(self, batch=None):
        shape = (self.hidden,) if batch is None else (batch, self.hidden)
        return {"h": np.zeros(shape, DTYPE), "c": np.zeros(shape, DTYPE)}

    def step(self, x, state):
        h, c = self.recur(self.input_gates(x), state["h"], state["c"])
        state["h"], state["c"] = h, c
        return self._check(h)


class FTLSTM(Module):
    """Frequency-then-time LSTM bottleneck with residual projections.

    The frequency LSTM is bidirectional and restarts every frame (it scans
    bins, not time).  The time LSTM runs per bin with state carried across
    frames.  Each sub-LSTM's output is projected back to ``channels`` and
    added to its input.
    """

    kind = "FTLSTM"

    def __init__(self, name, channels, bins, freq_hidden=128, time_hidden=128):
        super().__init__(name)
        self.channels, self.bins = channels, bins
        self.f_fwd = self.add("f_fwd", LSTM(f"{name}.f_fwd", channels, freq_hidden))
        self.f_bwd = self.add("f_bwd", LSTM(f"{name}.f_bwd", channels, freq_hidden))
        self.f_proj = self.add("f_proj", Linear(f"{name}.f_proj", 2 * freq_hidden, channels))
        self.t_lstm = self.add("t_lstm", LSTM(f"{name}.t_lstm", channels, time_hidden))
        self.t_proj = self.add("t_proj", Linear(f"{name}.t_proj", time_hidden, channels))

    def hparams(self):
        return {"channels": self.channels, "bins": self.bins,
                "freq_hidden": self.f_fwd.hidden, "time_hidden": self.t_lstm.hidden}

    def init_state(self):
        return {"t_lstm": self.t_lstm.init_state(batch=self.bins)}

    def _scan(self, lstm, gi, reverse):
        hs = lstm.hidden
        h = np.zeros(hs, DTYPE)
        c = np.zeros(hs, DTYPE)
        out = np.empty((gi.shape[0], hs), DTYPE)
        order = range(gi.shape[0] - 1, -1, -1) if reverse else range(gi.shape[0])
        for f in order:
            h, c = lstm.recur(gi[f], h, c)
            out[f] = h
        return out

    def step(self, x, state):
        check_shape(x, (self.channels, self.bins), self.name)
        xs = x.T
        fwd = self._scan(self.f_fwd, self.f_fwd.input_gates(xs), reverse=False)
        bwd = self._scan(self.f_bwd, self.f_bwd.input_gates(xs), reverse=True)
        x1 = xs + self.f_proj.step(np.concatenate([fwd, bwd], axis=1))
        ht = self.t_lstm.step(x1, state["t_lstm"])
        x2 = x1 + self.t_proj.step(ht)
        return self._check(np.ascontiguousarray(x2.T))


class ConvBnAct(Module):
    kind = "ConvBnPReLU"

    def __init__(self, name, conv, channels):
        super().__init__(name)
        self.conv = self.add("conv", conv)
        self.bn = self.add("bn", BatchNorm(f"{name}.bn", channels))
        self.act = self.add("act", PReLU(f"{name}.act", channels))
        self.out_bins = conv.out_bins

    def step(self, x, state):
        return self.act.step(self.bn.step(self.conv.step(x, state["conv"])))


class UNetBlock(Module):
    """Residual U-block with ``depth`` down/up levels.

    Down levels are stride-2 convolutions; a stride-1 convolution sits at the
    bottom; each up level is a transposed convolution over the concatenation
    of the path from below with the same-level down feature.  The result is
    added to the block input, so channels and bins are preserved.
    """

    kind = "UNetBlock"

    def __init__(self, name, channels, bins, depth=2):
        super().__init__(name)
        self.channels, self.bins, self.depth = channels, bins, depth
        dims = [bins]
        for _ in range(depth):
            dims.append(conv_out_bins(dims[-1], 3, 2))
            if dims[-1] < 1:
                raise ConfigurationError(
                    f"{name}: {bins} bins too few for a depth-{depth} U-block")
        self.dims = dims
        c = channels
        self.downs = [self.add(f"down{k}", ConvBnAct(
            f"{name}.down{k}", Conv2d(f"{name}.down{k}.conv", c, c, dims[k - 1]), c))
            for k in range(1, depth + 1)]
        self.mid = self.add("mid", ConvBnAct(
            f"{name}.mid", Conv2d(f"{name}.mid.conv", c, c, dims[depth], stride=(1, 1),
                                  freq_pad=(1, 1)), c))
        self.ups = {k: self.add(f"up{k}", ConvBnAct(
            f"{name}.up{k}", TrConv2d(f"{name}.up{k}.conv", 2 * c, c, dims[k], dims[k - 1]), c))
            for k in range(depth, 0, -1)}

    def hparams(self):
        return {"channels": self.channels, "bins": self.bins, "depth": self.depth,
                "level_bins": self.dims}

    def step(self, x, state):
        feats = [x]
        for k, down in enumerate(self.downs, start=1):
            feats.append(down.step(feats[-1], state[f"down{k}"]))
        u = self.mid.step(feats[-1], state["mid"])
        for k in range(self.depth, 0, -1):
            u = self.ups[k].step(np.concatenate([u, feats[k]], axis=0), state[f"up{k}"])
        return self._check(x + u)
