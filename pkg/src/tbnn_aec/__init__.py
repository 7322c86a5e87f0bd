"""Full-band hybrid acoustic echo cancellation: delay estimation, sub-band NLMS
and a two-step band-split neural post-filter."""

__version__ = "0.1.0"

from .dsp import AudioBuffer, Spectrogram, StftConfig, istft, stft
from .errors import (AecError, ConfigurationError, ContractError, DataError,
                     InsufficientDataError, NumericError, StageError, WeightsError)
from .pipeline import Diagnostics, StreamingCanceller, tbnn_process
from .postfilter import TBNN, TbnnConfig
from .tde import DelayEstimate, estimate_delay

__all__ = ["AecError", "AudioBuffer", "ConfigurationError", "ContractError", "DataError",
           "DelayEstimate", "Diagnostics", "InsufficientDataError", "NumericError",
           "Spectrogram", "StageError", "StftConfig", "StreamingCanceller", "TBNN", "TbnnConfig",
           "WeightsError", "estimate_delay", "istft", "stft", "tbnn_process"]
