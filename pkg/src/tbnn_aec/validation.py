"""Input validation helpers used by the estimators and the functional API."""

from __future__ import annotations

import numbers

import numpy as np

from .errors import ConfigurationError, ContractError, InsufficientDataError, NumericError


def check_audio(x, name="signal", *, sample_rate=None, expected_rate=None, min_samples=1,
                dtype=np.float64):
    """Return ``x`` as a finite 1-D float array.

    ``x`` may be an :class:`~tbnn_aec.dsp.AudioBuffer` or any array-like. When both
    ``sample_rate`` (declared by the caller or carried by the buffer) and
    ``expected_rate`` are known they must agree.
    """
    rate = getattr(x, "sample_rate", sample_rate)
    data = getattr(x, "samples", x)
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim != 1:
        raise ContractError(f"{name} must be mono (1-D), got shape {arr.shape}")
    if expected_rate is not None and rate is not None and int(rate) != int(expected_rate):
        raise ConfigurationError(
            f"{name} sample rate {rate} Hz does not match expected {expected_rate} Hz")
    if arr.shape[0] < min_samples:
        raise InsufficientDataError(
            f"{name} has {arr.shape[0]} samples, need at least {min_samples}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite samples")
    return arr


def check_pair(mic, ref, *, expected_rate=None, min_samples=1, same_length=True):
    d = check_audio(mic, "mic", expected_rate=expected_rate, min_samples=min_samples)
    x = check_audio(ref, "ref", expected_rate=expected_rate, min_samples=min_samples)
    if same_length and d.shape != x.shape:
        raise ContractError(f"mic and ref lengths differ: {d.shape[0]} vs {x.shape[0]}")
    return d, x


def check_positive(value, name, *, strict=True, integer=False):
    kind = numbers.Integral if integer else numbers.Real
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ConfigurationError(f"{name} must be {'an integer' if integer else 'a number'}, got {value!r}")
    if value < 0 or (strict and value == 0):
        raise ConfigurationError(f"{name} must be {'> 0' if strict else '>= 0'}, got {value!r}")
    return value


def check_in_range(value, name, low, high, *, low_open=False, high_open=False):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ConfigurationError(f"{name} must be a number, got {value!r}")
    too_low = value <= low if low_open else value < low
    too_high = value >= high if high_open else value > high
    if too_low or too_high:
        lb = "(" if low_open else "["
        hb = ")" if high_open else "]"
        raise ConfigurationError(f"{name}={value!r} outside {lb}{low}, {high}{hb}")
    return value


def check_frame(frame, bins, name="frame"):
    arr = np.asarray(frame)
    if arr.shape != (bins,):
        raise ContractError(f"{name} must have shape ({bins},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr
