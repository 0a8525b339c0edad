"""Front-end for distant multi-speaker ASR without neural models.

Microphone subset selection, multi-channel speaker counting, mask-based
SP-MWF enhancement, DER scoring and a synthetic scene generator.
"""

from .audio import MultichannelRecording, Spectrogram, StftConfig, Waveform, istft, stft
from .errors import ConfigError, DataError

__all__ = [
    "ConfigError",
    "DataError",
    "MultichannelRecording",
    "Spectrogram",
    "StftConfig",
    "Waveform",
    "istft",
    "stft",
]
__version__ = "0.1.0"
