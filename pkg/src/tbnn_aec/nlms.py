"""Per-bin multi-tap NLMS adaptive filter in the STFT domain.

Each of the 481 bins carries its own complex FIR of ``taps`` coefficients over
the most recent reference frames.  One call to :func:`nlms_step` consumes a
microphone frame and an (aligned) reference frame and returns the error ``e``
and the linear echo estimate ``y``.

The step is normalized by ``|x_k|^2 + delta + floor * P_k`` where ``P_k`` is
an exponentially smoothed copy of ``|x_k|^2``.  The smoothed term keeps the
step small when the reference goes quiet while the microphone still carries
reverberant echo; with ``floor=0`` the update is plain NLMS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import DEFAULT_STFT, StreamingStft, OverlapAdd
from .errors import ConfigurationError, NumericError
from .validation import check_frame, check_in_range, check_pair, check_positive


@dataclass(frozen=True)
class NlmsConfig:
    taps: int = 8
    mu: float = 0.5
    delta: float = 1e-6
    bins: int = 481
    floor: float = 1.0
    floor_smoothing: float = 0.99

    def __post_init__(self):
        check_in_range(self.floor, "floor", 0.0, np.inf)
        check_in_range(self.floor_smoothing, "floor_smoothing", 0.0, 1.0, high_open=True)
        check_positive(self.taps, "taps", integer=True)
        check_positive(self.bins, "bins", integer=True)
        check_positive(self.delta, "delta")
        try:
            check_in_range(self.mu, "mu", 0.0, 2.0, low_open=True)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{exc} (NLMS is stable only for 0 < mu <= 2)") from None


@dataclass
class NlmsState:
    weights: np.ndarray      # (bins, taps) complex
    ref_history: np.ndarray  # (bins, taps) complex, most recent first
    cfg: NlmsConfig = NlmsConfig()
    ref_power: np.ndarray | None = None  # (bins,) smoothed history energy

    def __post_init__(self):
        if self.ref_power is None:
            self.ref_power = np.zeros(self.weights.shape[0])

    def copy(self):
        return NlmsState(self.weights.copy(), self.ref_history.copy(), self.cfg,
                         self.ref_power.copy())


def nlms_init(cfg=NlmsConfig()):
    shape = (cfg.bins, cfg.taps)
    return NlmsState(np.zeros(shape, np.complex128), np.zeros(shape, np.complex128), cfg)


def _float32_grid(m):
    # spacing of the float32 grid at |m|; 0 where m == 0
    _, exp = np.frexp(m)
    return np.where(m != 0, np.ldexp(1.0, exp - 24), 0.0)


def _snap(y, m):
    g = _float32_grid(m)
    safe = np.where(g > 0, g, 1.0)
    # m - y stays exact in float64 only while |y| <= 2^52 grid steps; beyond
    # that m is numerically silent next to y and the estimate is clamped
    return np.where(g > 0, np.clip(np.round(y / safe), -2.0 ** 52, 2.0 ** 52) * safe, y)


def exact_split(mic, y):
    """Return ``(e, y')`` with ``y' ~= y`` and ``e + y' == mic`` bit-exactly.

    ``y`` is rounded onto the float32 grid of each ``mic`` component, which
    makes the float64 subtraction ``mic - y'`` exact whenever ``mic`` holds
    float32-representable values (the precision frames are carried at).
    Where ``|y|`` exceeds ``2**52`` grid steps of a near-silent ``mic`` bin,
    ``y'`` is clamped to that bound.
    """
    y = _snap(y.real, mic.real) + 1j * _snap(y.imag, mic.imag)
    return mic - y, y


def nlms_step(state, mic_frame, ref_frame):
    """Adapt one frame in place and return ``(e, y)``.

    On non-finite input or a non-finite update the state is left untouched and
    :class:`NumericError` is raised.
    """
    cfg = state.cfg
    mic = check_frame(mic_frame, cfg.bins, "mic_frame").astype(np.complex128)
    ref = check_frame(ref_frame, cfg.bins, "ref_frame").astype(np.complex128)
    hist = np.empty_like(state.ref_history)
    hist[:, 1:] = state.ref_history[:, :-1]
    hist[:, 0] = ref
    y = np.sum(np.conj(state.weights) * hist, axis=1)
    e, y = exact_split(mic, y)
    energy = np.sum(hist.real ** 2 + hist.imag ** 2, axis=1)
    a = cfg.floor_smoothing
    power = a * state.ref_power + (1 - a) * energy
    norm = energy + cfg.delta + cfg.floor * power
    weights = state.weights + (cfg.mu / norm)[:, None] * hist * np.conj(e)[:, None]
    if not np.all(np.isfinite(weights)):
        raise NumericError("NLMS weights diverged (non-finite update); frame rejected")
    state.ref_history = hist
    state.weights = weights
    state.ref_power = power
    return e, y


def nlms_filter(mic, ref, cfg=NlmsConfig(), stft_cfg=DEFAULT_STFT, state=None):
    """Run the filter over whole signals; returns ``(e, y, state)`` as time signals.

    Frames are rounded to float32 precision before adaptation, like in the
    streaming canceller.
    """
    d, x = check_pair(mic, ref, expected_rate=stft_cfg.sample_rate)
    state = nlms_init(cfg) if state is None else state
    hop = stft_cfg.hop
    n_frames = -(-len(d) // hop) + 1
    pad = n_frames * hop - len(d)
    d = np.concatenate([d, np.zeros(pad)])
    x = np.concatenate([x, np.zeros(pad)])
    sd, sx = StreamingStft(stft_cfg), StreamingStft(stft_cfg)
    oe, oy = OverlapAdd(stft_cfg), OverlapAdd(stft_cfg)
    e_out, y_out = [], []
    for t in range(n_frames):
        seg = slice(t * hop, (t + 1) * hop)
        dm = sd.push(d[seg]).astype(np.complex64)
        xr = sx.push(x[seg]).astype(np.complex64)
        e, y = nlms_step(state, dm, xr)
        e_out.append(oe.push(e))
        y_out.append(oy.push(y))
    # output hop t completes samples [(t-1)*hop, t*hop)
    n = len(mic) if not hasattr(mic, "samples") else len(mic.samples)
    e_sig = np.concatenate(e_out)[hop:hop + n]
    y_sig = np.concatenate(y_out)[hop:hop + n]
    return e_sig, y_sig, state
