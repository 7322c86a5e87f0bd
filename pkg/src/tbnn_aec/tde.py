"""Sub-band cross-correlation time delay estimation.

Both signals are analysed with the shared STFT; the magnitudes of the bins
between DC and 8 kHz are pooled into ``num_subbands`` uniform groups, giving
one envelope per sub-band.  For every candidate lag (in hops) the Pearson
correlation between the microphone envelope and the lagged reference envelope
is computed per sub-band and averaged.  The best lag is refined to sample
resolution by a parabola through the peak and its two neighbours.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .dsp import DEFAULT_STFT, stft
from .errors import InsufficientDataError
from .validation import check_audio, check_in_range, check_positive

TDE_MAX_HZ = 8000.0


@dataclass(frozen=True)
class TdeConfig:
    max_delay: int = 24000
    num_subbands: int = 32
    block: int = 100
    smoothing: float = 0.9
    median_blocks: int = 5
    min_duration: float = 1.0

    def __post_init__(self):
        check_positive(self.max_delay, "max_delay", integer=True)
        check_positive(self.num_subbands, "num_subbands", integer=True)
        check_positive(self.block, "block", integer=True)
        check_positive(self.median_blocks, "median_blocks", integer=True)
        check_in_range(self.smoothing, "smoothing", 0.0, 1.0, high_open=True)


@dataclass(frozen=True)
class DelayEstimate:
    delay: int
    confidence: float

    def ms(self, sample_rate=48000):
        return 1000.0 * self.delay / sample_rate


def subband_edges(num_subbands, cfg=DEFAULT_STFT):
    top = int(round(TDE_MAX_HZ * cfg.fft_size / cfg.sample_rate))
    edges = np.linspace(1, top + 1, num_subbands + 1)
    edges = np.round(edges).astype(int)
    if np.any(np.diff(edges) < 1):
        raise ValueError(f"too many sub-bands ({num_subbands}) for {top} bins below 8 kHz")
    return edges


def subband_envelopes(mag, edges):
    """Sum STFT magnitudes (frames x bins) into (frames x subbands) envelopes."""
    return np.add.reduceat(mag[:, edges[0]:edges[-1]], edges[:-1] - edges[0], axis=1)


def lag_correlation(mic_env, ref_env, max_lag, ref_offset=0):
    """Sub-band-averaged Pearson correlation for lags ``0..max_lag`` (in frames).

    ``mic_env[i]`` is paired with ``ref_env[ref_offset + i - lag]``; pairs that
    fall outside ``ref_env`` are dropped.  Sub-bands with no variance in either
    signal are excluded from the average.  Lags with fewer than 3 pairs get NaN.
    """
    n_mic = mic_env.shape[0]
    curve = np.full(max_lag + 1, np.nan)
    for lag in range(max_lag + 1):
        start = max(0, lag - ref_offset)
        stop = min(n_mic, ref_env.shape[0] - ref_offset + lag)
        if stop - start < 3:
            continue
        a = mic_env[start:stop]
        b = ref_env[ref_offset + start - lag:ref_offset + stop - lag]
        a = a - a.mean(axis=0)
        b = b - b.mean(axis=0)
        num = np.sum(a * b, axis=0)
        den = np.sqrt(np.sum(a * a, axis=0) * np.sum(b * b, axis=0))
        ok = den > 1e-12 * (1.0 + np.max(den, initial=0.0))
        curve[lag] = np.mean(num[ok] / den[ok]) if np.any(ok) else 0.0
    return curve


def pick_delay(curve, hop, max_delay):
    """Return ``(delay_samples, peak_value)`` from a lag-correlation curve."""
    if np.all(np.isnan(curve)):
        return 0, 0.0
    c = np.where(np.isnan(curve), -np.inf, curve)
    k = int(np.argmax(c))
    frac = 0.0
    if 0 < k < len(c) - 1 and np.isfinite(c[k - 1]) and np.isfinite(c[k + 1]):
        denom = c[k - 1] - 2.0 * c[k] + c[k + 1]
        if denom < 0:
            frac = float(np.clip(0.5 * (c[k - 1] - c[k + 1]) / denom, -0.5, 0.5))
    delay = int(round((k + frac) * hop))
    return min(max(delay, 0), max_delay), float(c[k])


def _clamp01(v):
    return float(min(max(v, 0.0), 1.0))


def estimate_delay(mic, ref, cfg=TdeConfig(), stft_cfg=DEFAULT_STFT):
    """Delay (in samples) by which ``mic`` lags ``ref``, over the whole signals."""
    min_len = int(cfg.min_duration * stft_cfg.sample_rate)
    try:
        d = check_audio(mic, "mic", expected_rate=stft_cfg.sample_rate, min_samples=min_len)
        x = check_audio(ref, "ref", expected_rate=stft_cfg.sample_rate, min_samples=min_len)
    except InsufficientDataError as exc:
        raise InsufficientDataError(f"delay estimation needs >= {cfg.min_duration} s: {exc}") from None
    n = min(len(d), len(x))
    edges = subband_edges(cfg.num_subbands, stft_cfg)
    mic_env = subband_envelopes(np.abs(stft(d[:n], stft_cfg).data), edges)
    ref_env = subband_envelopes(np.abs(stft(x[:n], stft_cfg).data), edges)
    max_lag = min(cfg.max_delay // stft_cfg.hop, mic_env.shape[0] - 3)
    curve = lag_correlation(mic_env, ref_env, max_lag)
    delay, peak = pick_delay(curve, stft_cfg.hop, cfg.max_delay)
    return DelayEstimate(delay, _clamp01(peak))


def align(ref, estimate, length=None):
    """``out[n] = ref[n - delay]`` with zero fill; ``length`` defaults to ``len(ref)``."""
    x = check_audio(ref, "ref")
    delay = estimate.delay if isinstance(estimate, DelayEstimate) else int(estimate)
    length = len(x) if length is None else int(length)
    out = np.zeros(length)
    if delay < length:
        take = min(len(x), length - delay)
        out[delay:delay + take] = x[:take]
    return out


def delay_by(x, k):
    """Shift ``x`` later by ``k`` samples, keeping its length."""
    return align(x, int(k))


class DelayTracker:
    """Block-wise streaming delay estimation.

    Envelopes are pushed one frame at a time.  Every ``cfg.block`` frames the
    lag-correlation curve of the most recent block is folded into an
    exponentially smoothed curve; the smoothed peak gives a per-block delay,
    and the reported delay is the median of the last ``median_blocks`` of
    those.  Updates happen only at block boundaries, so the result does not
    depend on how the caller chunks its input.
    """

    def __init__(self, cfg=TdeConfig(), stft_cfg=DEFAULT_STFT):
        self.cfg = cfg
        self.stft_cfg = stft_cfg
        self.edges = subband_edges(cfg.num_subbands, stft_cfg)
        self.max_lag = cfg.max_delay // stft_cfg.hop
        self.reset()

    def reset(self):
        b = self.cfg.num_subbands
        self._mic = np.zeros((self.cfg.block, b))
        self._ref = np.zeros((self.cfg.block + self.max_lag, b))
        self._frames = 0
        self._smoothed = None
        self._history = deque(maxlen=self.cfg.median_blocks)
        self.estimate = DelayEstimate(0, 0.0)
        self.updates = 0

    def push(self, mic_mag, ref_mag):
        """Add one frame of STFT magnitudes; returns the current estimate."""
        self._mic[:-1] = self._mic[1:]
        self._mic[-1] = subband_envelopes(mic_mag[None, :], self.edges)[0]
        self._ref[:-1] = self._ref[1:]
        self._ref[-1] = subband_envelopes(ref_mag[None, :], self.edges)[0]
        self._frames += 1
        if self._frames % self.cfg.block == 0:
            self._update()
        return self.estimate

    def _update(self):
        # only reference frames that have actually been observed take part
        seen = min(self._frames, self._ref.shape[0])
        ref = self._ref[-seen:]
        curve = lag_correlation(self._mic, ref, self.max_lag, ref_offset=seen - self.cfg.block)
        curve = np.nan_to_num(curve, nan=0.0)
        if self._smoothed is None:
            self._smoothed = curve
        else:
            s = self.cfg.smoothing
            self._smoothed = s * self._smoothed + (1.0 - s) * curve
        delay, peak = pick_delay(self._smoothed, self.stft_cfg.hop, self.cfg.max_delay)
        self._history.append(delay)
        median = int(np.median(np.asarray(self._history)))
        self.estimate = DelayEstimate(median, _clamp01(peak))
        self.updates += 1
