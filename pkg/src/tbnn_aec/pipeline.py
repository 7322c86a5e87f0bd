"""Streaming hybrid echo canceller: TDE -> align -> STFT -> NLMS -> TBNN -> iSTFT.

Everything runs one hop (10 ms) at a time.  Delay estimates change only at
block boundaries and every stage keeps its own per-stream state, so feeding a
signal in one call or in arbitrary chunks gives bit-identical output.  The
output stream lags the input by one hop; :meth:`StreamingCanceller.flush`
drains the tail so that the total output length equals the input length.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dsp import DEFAULT_STFT, OverlapAdd, StreamingStft, power_law
from .errors import AecError, ContractError, NumericError, StageError
from .nlms import NlmsConfig, nlms_init, nlms_step
from .postfilter import TBNN, TbnnConfig
from .tde import DelayEstimate, DelayTracker, TdeConfig
from .validation import check_audio


@dataclass
class Diagnostics:
    delay: DelayEstimate = DelayEstimate(0, 0.0)
    delay_track: list = field(default_factory=list)
    vad: list = field(default_factory=list)
    erle: list = field(default_factory=list)
    frames: int = 0
    time_linear: float = 0.0
    time_postfilter: float = 0.0

    def as_dict(self):
        return {"delay_samples": self.delay.delay, "delay_confidence": self.delay.confidence,
                "delay_ms": self.delay.ms(), "frames": self.frames,
                "vad": [float(v) for v in self.vad], "erle_db": [float(v) for v in self.erle],
                "time_linear_s": self.time_linear, "time_postfilter_s": self.time_postfilter}


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except (AecError, ValueError, FloatingPointError) as exc:
        raise StageError(name, exc) from exc


class StreamingCanceller:
    """Per-stream state of the full pipeline.

    ``model`` may be ``None`` only when ``linear_only`` is set.  ``delay`` fixes
    the alignment instead of tracking it.
    """

    def __init__(self, model=None, *, stft_cfg=DEFAULT_STFT, nlms_cfg=NlmsConfig(),
                 tde_cfg=TdeConfig(), linear_only=False, delay=None, output="enhanced",
                 realign_threshold=240, reset_on_realign=True):
        if model is None and not linear_only:
            raise ContractError("a bound TBNN model is required unless linear_only=True")
        if output not in ("enhanced", "echo"):
            raise ContractError("output must be 'enhanced' or 'echo'")
        self.model = model
        self.cfg = model.cfg if model is not None else TbnnConfig()
        self.stft_cfg = stft_cfg
        self.nlms_cfg = nlms_cfg
        self.tde_cfg = tde_cfg
        self.linear_only = linear_only
        self.fixed_delay = delay
        self.output = output
        self.realign_threshold = int(realign_threshold)
        self.reset_on_realign = reset_on_realign
        self.reset()

    def reset(self):
        cfg = self.stft_cfg
        self._mic_stft = StreamingStft(cfg)
        self._ref_stft = StreamingStft(cfg)
        self._window = cfg.analysis_window()
        self._ola = OverlapAdd(cfg)
        self._ola_y = OverlapAdd(cfg)
        self._tracker = DelayTracker(self.tde_cfg, cfg)
        self._nlms = nlms_init(self.nlms_cfg)
        self._tbnn = self.model.init_state() if self.model is not None else None
        hist = self.tde_cfg.max_delay + cfg.win_len
        if self.fixed_delay is not None:
            hist = max(hist, int(self.fixed_delay) + cfg.win_len)
        self._ref_hist = np.zeros(hist)
        self._mic_pending = np.zeros(0)
        self._ref_pending = np.zeros(0)
        self._samples_in = 0
        self._samples_out = 0
        self._frames = 0
        self.diagnostics = Diagnostics()
        if self.fixed_delay is not None:
            self.diagnostics.delay = DelayEstimate(int(self.fixed_delay), 1.0)
        self.echo_estimate = []
        self._applied = None

    @property
    def delay(self):
        if self.fixed_delay is not None:
            return int(self.fixed_delay)
        return self._tracker.estimate.delay

    def _aligned_ref_frame(self, delay):
        cfg = self.stft_cfg
        end = len(self._ref_hist) - delay
        seg = self._ref_hist[end - cfg.win_len:end]
        return np.fft.rfft(seg * self._window, n=cfg.fft_size)

    def _linear(self, mic_hop, ref_hop):
        cfg = self.stft_cfg
        h = cfg.hop
        self._ref_hist[:-h] = self._ref_hist[h:]
        self._ref_hist[-h:] = ref_hop
        mic_spec = self._mic_stft.push(mic_hop)
        ref_raw = self._ref_stft.push(ref_hop)
        if self.fixed_delay is None:
            est = _stage("tde", self._tracker.push, np.abs(mic_spec), np.abs(ref_raw))
            self.diagnostics.delay = est
        delay = self.delay
        self.diagnostics.delay_track.append(delay)
        # small refinements are absorbed by the per-bin filter; realign only on real moves
        applied = delay if self._applied is None else self._applied
        if abs(delay - applied) > self.realign_threshold:
            applied = delay
            if self.reset_on_realign:
                self._nlms = nlms_init(self.nlms_cfg)
        self._applied = applied
        ref_spec = ref_raw if applied == 0 else self._aligned_ref_frame(applied)
        mic32 = mic_spec.astype(np.complex64)
        ref32 = ref_spec.astype(np.complex64)
        e, y = _stage("nlms", nlms_step, self._nlms, mic32, ref32)
        return mic32, e, y

    def _post(self, d, e, y):
        cfg = self.cfg
        p = cfg.compression
        dc, ec, yc = (power_law(s, p).astype(np.complex64) for s in (d, e, y))
        stack = np.stack([dc.real, dc.imag, ec.real, ec.imag, yc.real, yc.imag])
        wb_in = np.ascontiguousarray(stack[:, :cfg.wb_bins])
        hb_in = np.ascontiguousarray(stack[:, cfg.wb_bins:])
        wb_out, vad, mask, hb_out = _stage("postfilter", self.model.step, wb_in, hb_in, self._tbnn)
        s_c = np.concatenate([wb_out[0] + 1j * wb_out[1], hb_out]).astype(np.complex128)
        if cfg.vad_gates_output:
            s_c = s_c * float(vad)
        s = power_law(s_c, 1.0 / p)
        if not np.all(np.isfinite(s)):
            raise StageError("postfilter", NumericError("non-finite post-filter output"))
        return s, float(vad)

    def _frame(self, mic_hop, ref_hop):
        t0 = time.perf_counter()
        d, e, y = self._linear(mic_hop, ref_hop)
        t1 = time.perf_counter()
        if self.linear_only:
            s, vad = e, float("nan")
        else:
            s, vad = self._post(d, e, y)
        out = self._ola.push(s)
        if self.output == "echo" or self.linear_only:
            self.echo_estimate.append(self._ola_y.push(y))
        t2 = time.perf_counter()
        diag = self.diagnostics
        diag.time_linear += t1 - t0
        diag.time_postfilter += t2 - t1
        diag.vad.append(vad)
        num = float(np.sum(np.abs(d) ** 2)) + 1e-12
        den = float(np.sum(np.abs(s) ** 2)) + 1e-12
        diag.erle.append(10.0 * np.log10(num / den))
        diag.frames += 1
        self._frames += 1
        return out

    def process(self, mic, ref):
        """Feed a chunk of equal-length mic/ref samples; returns the finished output samples."""
        d = check_audio(mic, "mic", min_samples=0)
        x = check_audio(ref, "ref", min_samples=0)
        if d.shape != x.shape:
            raise ContractError(f"chunk lengths differ: {len(d)} vs {len(x)}")
        self._samples_in += len(d)
        mic_buf = np.concatenate([self._mic_pending, d])
        ref_buf = np.concatenate([self._ref_pending, x])
        h = self.stft_cfg.hop
        n_hops = len(mic_buf) // h
        outs = [self._frame(mic_buf[i * h:(i + 1) * h], ref_buf[i * h:(i + 1) * h])
                for i in range(n_hops)]
        self._mic_pending = mic_buf[n_hops * h:]
        self._ref_pending = ref_buf[n_hops * h:]
        return self._emit(outs)

    def _emit(self, outs):
        h = self.stft_cfg.hop
        if not outs:
            return np.zeros(0)
        block = np.concatenate(outs)
        # the hop completed by frame 0 lies before time zero
        if self._frames == len(outs):
            block = block[h:]
        block = block[:self._samples_in - self._samples_out]
        self._samples_out += len(block)
        return block

    def flush(self):
        """Process zero padding until every input sample has an output sample."""
        h = self.stft_cfg.hop
        outs = []
        pending = len(self._mic_pending)
        if pending:
            pad = np.zeros(h - pending)
            outs.append(self._frame(np.concatenate([self._mic_pending, pad]),
                                    np.concatenate([self._ref_pending, pad])))
            self._mic_pending = np.zeros(0)
            self._ref_pending = np.zeros(0)
        while (self._frames - 1) * h < self._samples_in:
            outs.append(self._frame(np.zeros(h), np.zeros(h)))
        return self._emit(outs)

    def echo_signal(self):
        """Resynthesised linear echo estimate ``y`` (requires ``linear_only`` or ``output='echo'``)."""
        h = self.stft_cfg.hop
        if not self.echo_estimate:
            return np.zeros(0)
        return np.concatenate(self.echo_estimate)[h:h + self._samples_in]


def tbnn_process(mic, ref, model=None, *, chunk=None, **kwargs):
    """Run the whole pipeline on complete signals; returns ``(out, diagnostics)``.

    ``chunk`` (samples) feeds the stream piecewise; the result is identical
    for every chunk size.
    """
    d = check_audio(mic, "mic", expected_rate=DEFAULT_STFT.sample_rate)
    x = check_audio(ref, "ref", expected_rate=DEFAULT_STFT.sample_rate)
    if d.shape != x.shape:
        raise ContractError(f"mic and ref lengths differ: {len(d)} vs {len(x)}")
    stream = StreamingCanceller(model, **kwargs)
    step = len(d) if not chunk else int(chunk)
    parts = [stream.process(d[i:i + step], x[i:i + step]) for i in range(0, len(d), max(step, 1))]
    parts.append(stream.flush())
    return np.concatenate(parts), stream.diagnostics


def default_model(preset="small", seed=0, weights=None):
    from .nn.manifest import load_manifest

    cfg = TbnnConfig.preset(preset)
    if weights is None:
        return TBNN.from_seed(cfg, seed)
    return TBNN.from_manifest(load_manifest(weights), cfg)
