"""Evaluation metrics on time-domain signals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .validation import check_audio

SI_SDR_CAP = 60.0
_TINY = 1e-20


def _segment(x, segment):
    if segment is None:
        return x
    if isinstance(segment, slice):
        return x[segment]
    start, stop = segment
    return x[int(start):int(stop)]


def erle(mic, out, segment=None):
    """``10 log10(sum mic^2 / sum out^2)`` in dB over ``segment`` (a slice or (start, stop))."""
    d = check_audio(mic, "mic", min_samples=1)
    s = check_audio(out, "out", min_samples=1)
    if len(d) != len(s):
        raise ContractError(f"mic and out lengths differ: {len(d)} vs {len(s)}")
    num = float(np.sum(_segment(d, segment) ** 2))
    den = float(np.sum(_segment(s, segment) ** 2))
    if num <= 0:
        raise ContractError("erle: mic segment is silent")
    if den <= 0:
        return float("inf")
    return 10.0 * np.log10(num / den)


@dataclass(frozen=True)
class SiSdr:
    value: float
    capped: bool

    def __float__(self):
        return self.value


def si_sdr(estimate, reference, cap=SI_SDR_CAP):
    """Scale-invariant SDR in dB, capped at ``cap`` (flagged) so exact matches stay finite."""
    est = check_audio(estimate, "estimate", min_samples=1)
    ref = check_audio(reference, "reference", min_samples=1)
    if len(est) != len(ref):
        raise ContractError(f"lengths differ: {len(est)} vs {len(ref)}")
    ref_e = float(ref @ ref)
    if ref_e <= 0:
        raise ContractError("si_sdr: silent reference")
    target = (est @ ref) / ref_e * ref
    noise = est - target
    num, den = float(target @ target), float(noise @ noise)
    if den <= _TINY * max(num, _TINY):
        return SiSdr(float(cap), True)
    val = 10.0 * np.log10(max(num, _TINY) / den)
    return SiSdr(float(min(val, cap)), bool(val > cap))
