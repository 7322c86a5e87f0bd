"""Mono WAV I/O: IEEE float32 and 16-bit PCM."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .dsp import AudioBuffer
from .errors import ConfigurationError, DataError

SAMPLE_RATE = 48000
_PCM16_SCALE = 32768.0


def wav_read(path, expected_rate=SAMPLE_RATE):
    """Read a mono WAV as float samples; float32 files keep their exact values."""
    try:
        rate, data = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from None
    if expected_rate is not None and rate != expected_rate:
        raise ConfigurationError(
            f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / np.float32(_PCM16_SCALE)
    elif data.dtype == np.float32:
        samples = data
    elif data.dtype == np.float64:
        samples = data.astype(np.float32)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    if not np.all(np.isfinite(samples)):
        raise DataError(f"{path}: non-finite samples")
    return AudioBuffer(samples, rate)


def wav_write(path, audio, sample_rate=SAMPLE_RATE, fmt="float32"):
    """Write mono audio; ``fmt`` is ``"float32"`` or ``"pcm16"`` (clipped, rounded)."""
    if isinstance(audio, AudioBuffer):
        sample_rate, audio = audio.sample_rate, audio.samples
    x = np.asarray(audio, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("wav_write expects mono (1-D) audio")
    if not np.all(np.isfinite(x)):
        raise DataError("wav_write: non-finite samples")
    if fmt == "float32":
        data = x.astype(np.float32)
    elif fmt == "pcm16":
        data = np.clip(np.round(x * _PCM16_SCALE), -32768, 32767).astype(np.int16)
    else:
        raise ConfigurationError(f"unknown WAV format {fmt!r}")
    wavfile.write(str(path), int(sample_rate), data)
