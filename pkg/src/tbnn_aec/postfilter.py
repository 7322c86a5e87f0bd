"""Two-step band-split post-filter (TBNN).

The wide-band branch (WBPF) maps the compressed, re/im-stacked wide-band
``d, e, y`` spectra to the compressed near-end estimate: five U2-encoder
layers (GConv, BN, PReLU, residual U-block), an FTLSTM bottleneck, and five
gated transposed-convolution decoder blocks.  A small GRU head on the
bottleneck gives a per-frame voice-activity probability.

The high-band branch (HBPF) extracts features from the high-band stack with
three Conv2d/ELU/BN/Dropout modules, concatenates them with a 48-feature
pointwise projection of the wide-band estimate, runs a GRU and predicts a
bounded complex mask that multiplies the high-band ``e`` spectrum.

Decoder block wiring (level ``i`` counted from the bottleneck)::

    u   = h + skip1x1(encoder_output[4 - i])
    out = TrConv_value(u) * sigmoid(TrConv_gate(u))
    out = PReLU(BN(out))                 # all but the last block
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dsp import Spectrogram
from .errors import ConfigurationError, ContractError
from .nn import kernels as K
from .nn.layers import (FTLSTM, GRU, Activation, BatchNorm, Conv1x1, Conv2d, Dropout,
                        GConv, Linear, PReLU, TrConv2d, UNetBlock)
from .nn.manifest import WeightManifest, seed_init
from .nn.module import DTYPE, Module

PAPER_PARAMS_LARGE = 9.56e6
PAPER_PARAMS_SMALL = 5.45e6


@dataclass(frozen=True)
class TbnnConfig:
    channels: int = 80
    wb_bins: int = 321
    hb_bins: int = 160
    input_channels: int = 6
    encoder_layers: int = 5
    unet_depth: int = 2
    ftlstm_freq_hidden: int = 128
    ftlstm_time_hidden: int = 128
    vad_hidden: int = 64
    hbpf_conv_modules: int = 3
    hbpf_conv_channels: int = 128
    hbpf_pointwise_channels: int = 48
    hbpf_gru_hidden: int = 256
    dropout: float = 0.25
    compression: float = 0.5
    mask_clip: float = 2.0
    mask_target: str = "e"
    vad_gates_output: bool = False

    def __post_init__(self):
        for name in ("channels", "wb_bins", "hb_bins", "input_channels", "encoder_layers",
                     "unet_depth", "ftlstm_freq_hidden", "ftlstm_time_hidden", "vad_hidden",
                     "hbpf_conv_modules", "hbpf_conv_channels", "hbpf_pointwise_channels",
                     "hbpf_gru_hidden"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        if self.input_channels % 2:
            raise ConfigurationError("input_channels must be even (re/im pairs)")
        if self.mask_target not in ("e", "d"):
            raise ConfigurationError("mask_target must be 'e' or 'd'")
        if not 0 <= self.dropout < 1:
            raise ConfigurationError("dropout must be in [0, 1)")
        if self.mask_clip <= 0:
            raise ConfigurationError("mask_clip must be > 0")
        if self.compression != 0.5:
            raise ConfigurationError("only 0.5 power compression is supported")

    @classmethod
    def preset(cls, name, **overrides):
        presets = {"small": 80, "large": 128}
        if name not in presets:
            raise ConfigurationError(f"unknown preset {name!r}; choose small or large")
        return replace(cls(channels=presets[name]), **overrides)

    @property
    def total_bins(self):
        return self.wb_bins + self.hb_bins

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class EncoderLayer(Module):
    kind = "U2Encoder"

    def __init__(self, name, cin, channels, bins, depth):
        super().__init__(name)
        self.gconv = self.add("gconv", GConv(f"{name}.gconv", cin, channels, bins))
        self.out_bins = self.gconv.out_bins
        self.bn = self.add("bn", BatchNorm(f"{name}.bn", channels))
        self.act = self.add("act", PReLU(f"{name}.act", channels))
        self.unet = self.add("unet", UNetBlock(f"{name}.unet", channels, self.out_bins, depth))

    def step(self, x, state):
        h = self.act.step(self.bn.step(self.gconv.step(x, state["gconv"])))
        return self.unet.step(h, state["unet"])


class DecoderBlock(Module):
    kind = "GatedDecoderBlock"

    def __init__(self, name, channels, cout, in_bins, out_bins, last):
        super().__init__(name)
        self.last = last
        self.skip = self.add("skip", Conv1x1(f"{name}.skip", channels, channels, in_bins))
        self.value = self.add("value", TrConv2d(f"{name}.value", channels, cout, in_bins, out_bins))
        self.gate = self.add("gate", TrConv2d(f"{name}.gate", channels, cout, in_bins, out_bins))
        if not last:
            self.bn = self.add("bn", BatchNorm(f"{name}.bn", cout))
            self.act = self.add("act", PReLU(f"{name}.act", cout))

    def hparams(self):
        return {"last": self.last}

    def step(self, h, enc, state):
        u = h + self.skip.step(enc)
        out = self.value.step(u, state["value"]) * K.sigmoid(self.gate.step(u, state["gate"]))
        if not self.last:
            out = self.act.step(self.bn.step(out))
        return self._check(out)


class WBPF(Module):
    kind = "WBPF"

    def __init__(self, cfg, name="wbpf"):
        super().__init__(name)
        self.cfg = cfg
        c = cfg.channels
        bins = [cfg.wb_bins]
        self.encoders = []
        for i in range(cfg.encoder_layers):
            cin = cfg.input_channels if i == 0 else c
            enc = self.add(f"enc{i}", EncoderLayer(f"{name}.enc{i}", cin, c, bins[-1],
                                                   cfg.unet_depth))
            self.encoders.append(enc)
            bins.append(enc.out_bins)
        self.bins = bins
        self.bottleneck = self.add("ftlstm", FTLSTM(f"{name}.ftlstm", c, bins[-1],
                                                    cfg.ftlstm_freq_hidden,
                                                    cfg.ftlstm_time_hidden))
        self.decoders = []
        n = cfg.encoder_layers
        for i in range(n):
            last = i == n - 1
            dec = self.add(f"dec{i}", DecoderBlock(f"{name}.dec{i}", c, 2 if last else c,
                                                   bins[n - i], bins[n - i - 1], last))
            self.decoders.append(dec)
        self.vad_gru = self.add("vad_gru", GRU(f"{name}.vad_gru", c * bins[-1], cfg.vad_hidden))
        self.vad_out = self.add("vad_out", Linear(f"{name}.vad_out", cfg.vad_hidden, 1))

    def hparams(self):
        return {"level_bins": self.bins}

    def step(self, x, state):
        """``x`` is the (6, wb_bins) stack of one frame; returns ((2, wb_bins), vad)."""
        feats = []
        h = x
        for i, enc in enumerate(self.encoders):
            h = enc.step(h, state[f"enc{i}"])
            feats.append(h)
        h = self.bottleneck.step(h, state["ftlstm"])
        v = self.vad_gru.step(h.reshape(-1), state["vad_gru"])
        vad = K.sigmoid(self.vad_out.step(v))[0]
        for i, dec in enumerate(self.decoders):
            h = dec.step(h, feats[-1 - i], state[f"dec{i}"])
        return h, vad


class HBPF(Module):
    kind = "HBPF"

    def __init__(self, cfg, name="hbpf", training=False, seed=0):
        super().__init__(name)
        self.cfg = cfg
        bins = cfg.hb_bins
        cin = cfg.input_channels
        self.convs = []
        for i in range(cfg.hbpf_conv_modules):
            conv = self.add(f"conv{i}", Conv2d(f"{name}.conv{i}.conv", cin,
                                               cfg.hbpf_conv_channels, bins))
            self.add(f"elu{i}", Activation(f"{name}.conv{i}.elu", "ELU"))
            self.add(f"bn{i}", BatchNorm(f"{name}.conv{i}.bn", cfg.hbpf_conv_channels))
            self.add(f"drop{i}", Dropout(f"{name}.conv{i}.drop", cfg.dropout, training, seed + i))
            self.convs.append(conv)
            cin, bins = cfg.hbpf_conv_channels, conv.out_bins
        self.feat_bins = bins
        self.prior = self.add("prior", Linear(f"{name}.prior", 2 * cfg.wb_bins,
                                              cfg.hbpf_pointwise_channels, pointwise=True))
        feat = cfg.hbpf_conv_channels * bins + cfg.hbpf_pointwise_channels
        self.gru = self.add("gru", GRU(f"{name}.gru", feat, cfg.hbpf_gru_hidden))
        self.mask_conv = self.add("mask", Conv1x1(f"{name}.mask", cfg.hbpf_gru_hidden,
                                                  2 * cfg.hb_bins, 1))

    def hparams(self):
        return {"feature_bins": self.feat_bins}

    def step(self, x, wb_out, state, force_mask=None):
        """Returns ``(mask, hb_out)``, both complex ``(hb_bins,)``, compressed domain."""
        cfg = self.cfg
        h = x
        for i in range(len(self.convs)):
            h = self.children[f"conv{i}"].step(h, state[f"conv{i}"])
            h = self.children[f"elu{i}"].step(h)
            h = self.children[f"bn{i}"].step(h)
            h = self.children[f"drop{i}"].step(h, state[f"drop{i}"])
        prior = self.prior.step(wb_out.reshape(-1))
        g = self.gru.step(np.concatenate([h.reshape(-1), prior]), state["gru"])
        raw = self.mask_conv.step(g[:, None])[:, 0]
        if force_mask is not None:
            mask = np.broadcast_to(np.asarray(force_mask, np.complex64), (cfg.hb_bins,))
        else:
            mask = bounded_mask(raw[:cfg.hb_bins], raw[cfg.hb_bins:], cfg.mask_clip)
        k = 0 if cfg.mask_target == "d" else 2
        target = x[k].astype(np.complex64) + 1j * x[k + 1].astype(np.complex64)
        return mask, mask * target


def bounded_mask(re, im, clip):
    """Complex mask with magnitude ``clip * tanh(|raw|)`` and the raw phase."""
    raw = re.astype(np.complex64) + 1j * im.astype(np.complex64)
    mag = np.abs(raw)
    # shave a few float32 ulps so rounding of re/im cannot push |mask| past clip
    bound = DTYPE(clip) * DTYPE(1 - 4 * np.finfo(DTYPE).eps)
    scale = np.where(mag > 0, bound * np.tanh(mag) / np.where(mag > 0, mag, 1), 0)
    return (raw * scale.astype(DTYPE)).astype(np.complex64)


@dataclass
class TbnnState:
    """Streaming buffers of both branches for one stream."""

    wbpf: dict
    hbpf: dict
    frames: int = 0
    factory: object = field(default=None, repr=False)

    def reset(self):
        self.wbpf, self.hbpf = self.factory()
        self.frames = 0


class TBNN(Module):
    """The full post-filter; bind weights with :meth:`bind` or :meth:`from_seed`."""

    kind = "TBNN"

    def __init__(self, cfg=TbnnConfig(), training=False, seed=0):
        super().__init__("tbnn")
        self.cfg = cfg
        self.wbpf = self.add("wbpf", WBPF(cfg))
        self.hbpf = self.add("hbpf", HBPF(cfg, training=training, seed=seed))
        self.force_mask = None

    @classmethod
    def from_seed(cls, cfg=TbnnConfig(), seed=0):
        model = cls(cfg)
        model.bind_manifest(model.seed_manifest(seed))
        return model

    @classmethod
    def from_manifest(cls, manifest, cfg=None, allow_unused=False):
        if cfg is None:
            stored = manifest.metadata.get("config")
            cfg = TbnnConfig(**stored) if stored else TbnnConfig()
        model = cls(cfg)
        model.bind_manifest(manifest, allow_unused=allow_unused)
        return model

    def seed_manifest(self, seed):
        return seed_init(self, seed, self.manifest_metadata())

    def manifest_metadata(self):
        return {"model": "tbnn", "config": asdict(self.cfg), "config_hash": self.cfg.digest(),
                "graph": self.graph_definition()}

    def bind_manifest(self, manifest, allow_unused=False):
        self.bind(manifest.bind(self.param_specs(), allow_unused=allow_unused))
        self.manifest = manifest
        return self

    def bind(self, params):
        super().bind(params)
        self.weights = {s.name: np.asarray(params[s.name], DTYPE) for s in self.param_specs()}
        return self

    def export_manifest(self):
        return WeightManifest.from_arrays(self.weights, self.manifest_metadata())

    def init_state(self):
        def factory():
            return self.wbpf.init_state(), self.hbpf.init_state()
        return TbnnState(*factory(), factory=factory)

    def step(self, wb_in, hb_in, state):
        """One frame: ``wb_in`` (6, wb_bins), ``hb_in`` (6, hb_bins), float32.

        Returns ``(wb_out (2, wb_bins), vad, mask (hb_bins,), hb_out (hb_bins,))``.
        """
        wb_out, vad = self.wbpf.step(wb_in, state.wbpf)
        mask, hb_out = self.hbpf.step(hb_in, wb_out, state.hbpf, self.force_mask)
        state.frames += 1
        return wb_out, vad, mask, hb_out

    def graph_definition(self):
        return {
            "model": "tbnn",
            "config": asdict(self.cfg),
            "decoder_wiring": ("u = h + skip1x1(enc[L-1-i]); "
                               "out = TrConv_value(u) * sigmoid(TrConv_gate(u)); "
                               "BN+PReLU except last"),
            "tensor_layout": "per-frame (channels, bins); conv weight (cout, cin, kt, kf); "
                             "tconv weight (cin, cout, kt, kf); time index 0 = previous frame",
            "root": self.describe(),
            "parameters": [{"name": s.name, "shape": list(s.shape)} for s in self.param_specs()],
        }

    def describe_counts(self):
        n = self.num_parameters()
        per_branch = {"wbpf": self.wbpf.num_parameters(), "hbpf": self.hbpf.num_parameters()}
        buffers = sum(s.size for s in self.param_specs() if s.name.endswith(("running_mean",
                                                                             "running_var")))
        ref = PAPER_PARAMS_LARGE if self.cfg.channels == 128 else (
            PAPER_PARAMS_SMALL if self.cfg.channels == 80 else None)
        out = {"total_values": n, "trainable": n - buffers, "buffers": buffers,
               "branches": per_branch, "config_hash": self.cfg.digest()}
        if ref is not None:
            out["reference_params"] = ref
            out["relative_delta"] = (out["trainable"] - ref) / ref
        return out


def _check_stack(x, channels, bins, where):
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != channels or x.shape[2] != bins:
        raise ContractError(f"{where}: expected ({channels}, T, {bins}) stack, got {x.shape}")
    return x.astype(DTYPE)


def wbpf_forward(wb_in, model, state=None):
    """Run the wide-band branch over a (6, T, wb_bins) stack.

    Returns ``(Spectrogram compressed (T, wb_bins), vad (T,))``.
    """
    cfg = model.cfg
    x = _check_stack(wb_in, cfg.input_channels, cfg.wb_bins, "wbpf_forward")
    state = model.init_state() if state is None else state
    outs, vads = [], []
    for t in range(x.shape[1]):
        o, v = model.wbpf.step(np.ascontiguousarray(x[:, t, :]), state.wbpf)
        outs.append(o[0] + 1j * o[1])
        vads.append(v)
    data = np.array(outs, dtype=np.complex64).reshape(-1, cfg.wb_bins)
    return Spectrogram(data, cfg.compression), np.array(vads, dtype=DTYPE)


def hbpf_forward(hb_in, wb_out, model, state=None, force_mask=None):
    """Run the high-band branch; returns ``(mask (T, hb_bins), Spectrogram compressed)``."""
    cfg = model.cfg
    x = _check_stack(hb_in, cfg.input_channels, cfg.hb_bins, "hbpf_forward")
    wb = wb_out.data if isinstance(wb_out, Spectrogram) else np.asarray(wb_out)
    if wb.shape != (x.shape[1], cfg.wb_bins):
        raise ContractError(f"hbpf_forward: wb_out has shape {wb.shape}, "
                            f"expected ({x.shape[1]}, {cfg.wb_bins})")
    state = model.init_state() if state is None else state
    masks, outs = [], []
    for t in range(x.shape[1]):
        prior = np.stack([wb[t].real, wb[t].imag]).astype(DTYPE)
        m, o = model.hbpf.step(np.ascontiguousarray(x[:, t, :]), prior, state.hbpf, force_mask)
        masks.append(m)
        outs.append(o)
    masks = np.array(masks, dtype=np.complex64).reshape(-1, cfg.hb_bins)
    outs = np.array(outs, dtype=np.complex64).reshape(-1, cfg.hb_bins)
    return masks, Spectrogram(outs, cfg.compression)


__all__ = ["HBPF", "TBNN", "TbnnConfig", "TbnnState", "WBPF", "bounded_mask",
           "hbpf_forward", "wbpf_forward"]
