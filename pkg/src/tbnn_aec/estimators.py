"""scikit-learn style wrappers around the delay estimator, the NLMS filter and the full pipeline.

Echo cancellation needs two aligned signals, so ``fit``/``transform`` take
``(mic, ref)`` instead of a feature matrix.  Hyper-parameters follow the
``get_params``/``set_params`` conventions, and learned state lives in
trailing-underscore attributes.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .dsp import DEFAULT_STFT
from .nlms import NlmsConfig, nlms_filter
from .nn.manifest import load_manifest
from .pipeline import StreamingCanceller, tbnn_process
from .postfilter import TBNN, TbnnConfig
from .tde import DelayEstimate, TdeConfig, align, estimate_delay
from .validation import check_pair


def _require(est, attr):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted; call fit() first")


class DelayEstimator(BaseEstimator):
    """Estimates how far the microphone lags the reference and aligns the reference."""

    def __init__(self, max_delay=24000, num_subbands=32):
        self.max_delay = max_delay
        self.num_subbands = num_subbands

    def fit(self, mic, ref):
        cfg = TdeConfig(max_delay=self.max_delay, num_subbands=self.num_subbands)
        est = estimate_delay(mic, ref, cfg)
        self.delay_ = est.delay
        self.confidence_ = est.confidence
        return self

    def transform(self, ref):
        _require(self, "delay_")
        return align(ref, DelayEstimate(self.delay_, self.confidence_))

    def fit_transform(self, mic, ref):
        return self.fit(mic, ref).transform(ref)


class LinearEchoCanceller(BaseEstimator):
    """Sub-band NLMS; ``transform`` returns the error signal ``e``, ``echo_`` holds ``y``."""

    def __init__(self, taps=8, mu=0.5, delta=1e-6, floor=1.0, delay=0):
        self.taps = taps
        self.mu = mu
        self.delta = delta
        self.floor = floor
        self.delay = delay

    def _config(self):
        return NlmsConfig(taps=self.taps, mu=self.mu, delta=self.delta, floor=self.floor)

    def fit(self, mic, ref):
        d, x = check_pair(mic, ref, expected_rate=DEFAULT_STFT.sample_rate)
        self.nlms_config_ = self._config()
        e, y, state = nlms_filter(d, align(x, int(self.delay)), self.nlms_config_)
        self.residual_, self.echo_, self.state_ = e, y, state
        return self

    def transform(self, mic, ref):
        """Filter from a fresh state (adaptation restarts for each call)."""
        d, x = check_pair(mic, ref, expected_rate=DEFAULT_STFT.sample_rate)
        return nlms_filter(d, align(x, int(self.delay)), self._config())[0]

    def fit_transform(self, mic, ref):
        return self.fit(mic, ref).residual_


class TBNNEchoCanceller(BaseEstimator):
    """Full hybrid canceller.  ``fit`` only binds weights; nothing is trained."""

    def __init__(self, preset="small", weights=None, seed=0, delay=None, linear_only=False,
                 chunk=None):
        self.preset = preset
        self.weights = weights
        self.seed = seed
        self.delay = delay
        self.linear_only = linear_only
        self.chunk = chunk

    def fit(self, mic=None, ref=None):
        if self.linear_only:
            self.model_ = None
        elif self.weights is None:
            self.model_ = TBNN.from_seed(TbnnConfig.preset(self.preset), self.seed)
        else:
            self.model_ = TBNN.from_manifest(load_manifest(self.weights), TbnnConfig.preset(self.preset))
        return self

    def transform(self, mic, ref):
        _require(self, "model_")
        out, diag = tbnn_process(mic, ref, self.model_, chunk=self.chunk,
                                 linear_only=self.linear_only, delay=self.delay)
        self.diagnostics_ = diag
        return out

    def fit_transform(self, mic, ref):
        return self.fit(mic, ref).transform(mic, ref)

    def stream(self):
        """A fresh :class:`~tbnn_aec.pipeline.StreamingCanceller` sharing the bound model."""
        _require(self, "model_")
        return StreamingCanceller(self.model_, linear_only=self.linear_only, delay=self.delay)
