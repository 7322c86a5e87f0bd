"""STFT analysis/synthesis, power-law compression and band splitting.

All transforms use a 960-point square-root Hann window pair at 50% overlap,
which satisfies the constant-overlap-add condition, so that analysis followed
by overlap-add synthesis reconstructs the signal without extra normalisation.

Framing is causal: the signal is prefixed with ``win_len - hop`` zeros, so
frame ``t`` covers input samples ``[t*hop - (win_len - hop), t*hop + hop)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError
from .validation import check_audio, check_positive

SAMPLE_RATE = 48000


@dataclass(frozen=True)
class AudioBuffer:
    """Mono samples with their sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = SAMPLE_RATE
    win_len: int = 960
    hop: int = 480
    fft_size: int = 960
    window: str = "sqrt_hann"

    def __post_init__(self):
        check_positive(self.sample_rate, "sample_rate", integer=True)
        check_positive(self.win_len, "win_len", integer=True)
        check_positive(self.hop, "hop", integer=True)
        if self.sample_rate != SAMPLE_RATE:
            raise ConfigurationError(f"only {SAMPLE_RATE} Hz is supported, got {self.sample_rate}")
        if self.win_len != self.fft_size:
            raise ConfigurationError("win_len must equal fft_size")
        if self.win_len % self.hop:
            raise ConfigurationError("hop must divide win_len")
        if self.window not in _WINDOWS:
            raise ConfigurationError(f"unknown window {self.window!r}")
        if self.window == "sqrt_hann" and self.win_len != 2 * self.hop:
            raise ConfigurationError("sqrt_hann pair is COLA only at 50% overlap")

    @property
    def bins(self):
        return self.fft_size // 2 + 1

    @property
    def lookback(self):
        """Leading zero padding (samples of algorithmic look-back per frame)."""
        return self.win_len - self.hop

    def analysis_window(self):
        return _WINDOWS[self.window](self.win_len)

    synthesis_window = analysis_window

    def num_frames(self, n_samples):
        return -(-n_samples // self.hop)


def _sqrt_hann(n):
    k = np.arange(n)
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * k / n))


_WINDOWS = {"sqrt_hann": _sqrt_hann}


@dataclass
class Spectrogram:
    """Complex time-frequency matrix, frames x bins."""

    data: np.ndarray
    compression_exponent: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ContractError(f"spectrogram must be 2-D (frames x bins), got {self.data.shape}")
        if self.compression_exponent not in (1.0, 0.5):
            raise ContractError(f"unsupported compression exponent {self.compression_exponent}")

    @property
    def frames(self):
        return self.data.shape[0]

    @property
    def bins(self):
        return self.data.shape[1]

    @property
    def compressed(self):
        return self.compression_exponent != 1.0


@dataclass(frozen=True)
class BandSplitSpec:
    """Wide band owns bins ``[0, split)``, high band owns ``[split, total)``."""

    split: int = 321
    total: int = 481

    def __post_init__(self):
        if not 0 < self.split < self.total:
            raise ConfigurationError("band split must lie strictly inside the spectrum")

    @property
    def wb_bins(self):
        return self.split

    @property
    def hb_bins(self):
        return self.total - self.split


DEFAULT_STFT = StftConfig()
DEFAULT_SPLIT = BandSplitSpec()


def frame_signal(x, cfg=DEFAULT_STFT):
    """Causally pad ``x`` and cut it into ``ceil(len/hop)`` overlapping frames."""
    n_frames = cfg.num_frames(len(x))
    padded = np.zeros((n_frames - 1) * cfg.hop + cfg.win_len, dtype=np.float64)
    padded[cfg.lookback:cfg.lookback + len(x)] = x
    view = np.lib.stride_tricks.sliding_window_view(padded, cfg.win_len)[::cfg.hop]
    return view[:n_frames]


def stft(signal, cfg=DEFAULT_STFT):
    x = check_audio(signal, "signal", expected_rate=cfg.sample_rate)
    frames = frame_signal(x, cfg) * cfg.analysis_window()
    return Spectrogram(np.fft.rfft(frames, n=cfg.fft_size, axis=-1))


def istft(spec, cfg=DEFAULT_STFT, length=None):
    """Weighted overlap-add synthesis; returns ``length`` samples (default ``frames*hop``)."""
    if spec.compressed:
        raise ContractError("istft needs an uncompressed spectrogram; decompress first")
    if spec.bins != cfg.bins:
        raise ContractError(f"expected {cfg.bins} bins, got {spec.bins}")
    n_frames = spec.frames
    frames = np.fft.irfft(spec.data, n=cfg.fft_size, axis=-1)[:, :cfg.win_len]
    frames = frames * cfg.synthesis_window()
    out = np.zeros((n_frames - 1) * cfg.hop + cfg.win_len if n_frames else cfg.win_len)
    for t in range(n_frames):
        out[t * cfg.hop:t * cfg.hop + cfg.win_len] += frames[t]
    if length is None:
        length = n_frames * cfg.hop
    out = out[cfg.lookback:]
    if len(out) < length:
        out = np.concatenate([out, np.zeros(length - len(out))])
    return out[:length]


def compress(spec, p=0.5):
    """Raise every bin magnitude to ``p`` while keeping its phase."""
    if spec.compressed:
        raise ContractError("spectrogram is already compressed")
    return Spectrogram(power_law(spec.data, p), compression_exponent=p)


def decompress(spec):
    if not spec.compressed:
        raise ContractError("spectrogram is not compressed")
    return Spectrogram(power_law(spec.data, 1.0 / spec.compression_exponent))


def power_law(c, p):
    """``c -> |c|**p * c/|c|`` elementwise, with 0 mapped to 0; NaN propagates."""
    c = np.asarray(c)
    mag = np.abs(c)
    out = np.zeros_like(c)
    nz = mag != 0
    with np.errstate(invalid="ignore"):
        out[nz] = (c[nz] / mag[nz]) * mag[nz] ** p
    return out


def band_split(spec, bs=DEFAULT_SPLIT):
    if spec.bins != bs.total:
        raise ContractError(f"band_split expects {bs.total} bins, got {spec.bins}")
    p = spec.compression_exponent
    return (Spectrogram(spec.data[:, :bs.split], p),
            Spectrogram(spec.data[:, bs.split:], p))


def band_merge(wb, hb, bs=DEFAULT_SPLIT):
    if wb.bins != bs.wb_bins or hb.bins != bs.hb_bins:
        raise ContractError(f"band_merge expects {bs.wb_bins}+{bs.hb_bins} bins, "
                            f"got {wb.bins}+{hb.bins}")
    if wb.frames != hb.frames:
        raise ContractError("wide and high band frame counts differ")
    if wb.compression_exponent != hb.compression_exponent:
        raise ContractError("wide and high band compression differ")
    return Spectrogram(np.concatenate([wb.data, hb.data], axis=1), wb.compression_exponent)


def stack_reim(specs):
    """Stack spectrograms as ``[re(s1), im(s1), re(s2), ...]`` -> (channels, frames, bins)."""
    specs = list(specs)
    if not specs:
        raise ContractError("stack_reim needs at least one spectrogram")
    shape = specs[0].data.shape
    p = specs[0].compression_exponent
    for s in specs[1:]:
        if s.data.shape != shape or s.compression_exponent != p:
            raise ContractError("stack_reim inputs must share shape and compression")
    planes = []
    for s in specs:
        planes.append(s.data.real)
        planes.append(s.data.imag)
    return np.stack(planes)


def unstack_reim(stack, compression_exponent=1.0):
    stack = np.asarray(stack)
    if stack.ndim != 3 or stack.shape[0] % 2:
        raise ContractError(f"expected (2k, frames, bins) stack, got {stack.shape}")
    return [Spectrogram(stack[2 * i] + 1j * stack[2 * i + 1], compression_exponent)
            for i in range(stack.shape[0] // 2)]


@dataclass
class StreamingStft:
    """Frame-at-a-time analysis matching :func:`stft` frame for frame."""

    cfg: StftConfig = DEFAULT_STFT
    _buf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._window = self.cfg.analysis_window()
        self.reset()

    def reset(self):
        self._buf = np.zeros(self.cfg.win_len)

    def push(self, hop_samples):
        """Consume ``hop`` new samples and return the next spectrum frame."""
        h = self.cfg.hop
        self._buf[:-h] = self._buf[h:]
        self._buf[-h:] = hop_samples
        return np.fft.rfft(self._buf * self._window, n=self.cfg.fft_size)


@dataclass
class OverlapAdd:
    """Frame-at-a-time synthesis; each pushed frame completes ``hop`` output samples."""

    cfg: StftConfig = DEFAULT_STFT
    _acc: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._window = self.cfg.synthesis_window()
        self.reset()

    def reset(self):
        self._acc = np.zeros(self.cfg.win_len)

    def push(self, spectrum):
        h = self.cfg.hop
        frame = np.fft.irfft(spectrum, n=self.cfg.fft_size)[:self.cfg.win_len] * self._window
        self._acc += frame
        done = self._acc[:h].copy()
        self._acc[:-h] = self._acc[h:]
        self._acc[-h:] = 0.0
        return done
