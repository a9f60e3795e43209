"""Desk-scale tooling for LLM-based multilingual conversational ASR.

Scoring (WER/CER/MER), decoding with n-gram bans, checkpoint averaging,
audio augmentation and corpus accounting.
"""

from mlc_asr_kit.errors import ConfigError, FormatError, InputError, KitError
from mlc_asr_kit.textnorm import Language, Metric, metric_for, normalize, tokenize

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FormatError",
    "InputError",
    "KitError",
    "Language",
    "Metric",
    "metric_for",
    "normalize",
    "tokenize",
]
