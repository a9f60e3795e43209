"""Speed and volume perturbation of 16-bit mono PCM WAV audio."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from mlc_asr_kit.corpus import ManifestEntry
from mlc_asr_kit.errors import FormatError, InputError, KitError

logger = logging.getLogger(__name__)

_PCM = 1
_FULL_SCALE = 32768.0


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int
    channels: int = 1

    def __post_init__(self):
        if self.channels != 1:
            raise InputError(f"only mono audio is supported, got {self.channels} channels")
        if self.sample_rate <= 0:
            raise InputError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size and np.abs(self.samples).max() > 1.0:
            raise InputError("samples must lie in [-1, 1]")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path: str | os.PathLike) -> AudioBuffer:
    """Read a RIFF/WAVE file holding 16-bit little-endian mono PCM.

    Raises:
        FormatError: naming the chunk or field that is not supported.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file", 0)
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        chunk_id, size = struct.unpack("<4sI", blob[pos : pos + 8])
        body = blob[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"{path}: chunk {chunk_id!r} truncated", pos)
        if chunk_id == b"fmt ":
            if size < 16:
                raise FormatError(f"{path}: fmt chunk too short ({size} bytes)", pos)
            fmt = (pos, struct.unpack("<HHIIHH", body[:16]))
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk", 12)
    if data is None:
        raise FormatError(f"{path}: missing data chunk", 12)
    fmt_pos, (audio_format, channels, rate, _, _, bits) = fmt
    if audio_format != _PCM:
        raise FormatError(f"{path}: fmt.audio_format is {audio_format}, only PCM (1) is supported", fmt_pos + 8)
    if channels != 1:
        raise FormatError(f"{path}: fmt.channels is {channels}, only mono is supported", fmt_pos + 10)
    if bits != 16:
        raise FormatError(f"{path}: fmt.bits_per_sample is {bits}, only 16 is supported", fmt_pos + 22)
    if rate <= 0:
        raise FormatError(f"{path}: fmt.sample_rate is {rate}", fmt_pos + 12)
    if len(data) % 2:
        raise FormatError(f"{path}: data chunk has odd length {len(data)}")
    pcm = np.frombuffer(data, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float64) / _FULL_SCALE, rate)


def quantize(samples: np.ndarray) -> np.ndarray:
    """Float samples to int16 with round-half-away-from-zero, clipped."""
    scaled = np.asarray(samples, dtype=np.float64) * _FULL_SCALE
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, -32768, 32767).astype("<i2")


def encode_wav(audio: AudioBuffer) -> bytes:
    pcm = quantize(audio.samples).tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, _PCM, 1, audio.sample_rate, audio.sample_rate * 2, 2, 16,
        b"data", len(pcm),
    )  # fmt: skip
    return header + pcm


def write_wav(audio: AudioBuffer, path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_wav(audio))


def perturb_volume(audio: AudioBuffer, gain: float) -> AudioBuffer:
    """Scale by ``gain`` and hard-clamp to [-1, 1]."""
    if not gain > 0:
        raise InputError(f"gain must be > 0, got {gain}")
    return AudioBuffer(np.clip(audio.samples * gain, -1.0, 1.0), audio.sample_rate)


def speed_output_length(n: int, factor: float) -> int:
    # The epsilon keeps e.g. 11000 / 1.1 from landing one sample short.
    return int(math.floor(n / factor + 1e-9))


def perturb_speed(audio: AudioBuffer, factor: float) -> AudioBuffer:
    """Resample so playback is ``factor`` times faster (pitch shifts too).

    Output sample ``i`` is the linear interpolation of the input at position
    ``i * factor``; the output holds ``floor(n / factor)`` samples.
    """
    if not factor > 0:
        raise InputError(f"speed factor must be > 0, got {factor}")
    x = audio.samples
    if factor == 1.0 or x.size == 0:
        return AudioBuffer(x.copy(), audio.sample_rate)
    idx = np.arange(speed_output_length(x.size, factor), dtype=np.float64) * factor
    return AudioBuffer(np.interp(idx, np.arange(x.size, dtype=np.float64), x), audio.sample_rate)


@dataclass(frozen=True)
class AugmentPolicy:
    speed_factors: tuple[float, ...] = (0.9, 1.1)
    volume_range: tuple[float, float] = (0.15, 1.15)
    volume_copies: int = 1
    seed: int = 0

    def __post_init__(self):
        if any(not f > 0 for f in self.speed_factors):
            raise InputError(f"speed factors must be > 0, got {list(self.speed_factors)}")
        lo, hi = self.volume_range
        if not 0 < lo <= hi or not math.isfinite(hi):
            raise InputError(f"volume range must satisfy 0 < low <= high, got {list(self.volume_range)}")
        if self.volume_copies < 0:
            raise InputError("volume_copies must be >= 0")

    @classmethod
    def from_file(cls, path: str | os.PathLike, seed: int | None = None) -> "AugmentPolicy":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InputError(f"policy file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"policy file {path}: {exc}") from None
        unknown = set(doc) - {"speed_factors", "volume_range", "volume_copies", "seed"}
        if unknown:
            raise InputError(f"policy file {path}: unknown fields {sorted(unknown)}")
        kwargs = {}
        if "speed_factors" in doc:
            kwargs["speed_factors"] = tuple(float(f) for f in doc["speed_factors"])
        if "volume_range" in doc:
            lo, hi = doc["volume_range"]
            kwargs["volume_range"] = (float(lo), float(hi))
        if "volume_copies" in doc:
            kwargs["volume_copies"] = int(doc["volume_copies"])
        if seed is not None:
            kwargs["seed"] = seed
        elif "seed" in doc:
            kwargs["seed"] = int(doc["seed"])
        return cls(**kwargs)


def utterance_rng(seed: int, utterance_id: str) -> np.random.Generator:
    """Generator keyed by (seed, id), so results ignore processing order."""
    digest = hashlib.sha256(utterance_id.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


def _file_name(utterance_id: str) -> str:
    # A short digest keeps ids that differ only in unsafe characters apart.
    safe = "".join(c if c.isalnum() or c in "-_.@" else "_" for c in utterance_id)
    return f"{safe}-{hashlib.sha1(utterance_id.encode('utf-8')).hexdigest()[:8]}.wav"


class AugmentResult(NamedTuple):
    entries: list[ManifestEntry]
    errors: list[tuple[str, str]]


def apply_policy(
    manifest: Sequence[ManifestEntry], policy: AugmentPolicy, out_dir: str | os.PathLike
) -> AugmentResult:
    """Write perturbed copies of every utterance into ``out_dir``.

    Each input yields one copy per speed factor (id suffix ``_sp<factor>``)
    and ``volume_copies`` copies with a uniform random gain (``_vol<k>``).
    Entries whose audio cannot be read are recorded in ``errors`` and
    skipped.

    Raises:
        InputError: if the manifest is non-empty and every entry failed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries: list[ManifestEntry] = []
    errors: list[tuple[str, str]] = []
    for entry in manifest:
        try:
            audio = read_wav(entry.audio_path)
        except (OSError, KitError) as exc:
            logger.error("%s: %s", entry.utterance_id, exc)
            errors.append((entry.utterance_id, str(exc)))
            continue
        copies = [(f"_sp{f:g}", perturb_speed(audio, f), entry.duration_s / f) for f in policy.speed_factors]
        rng = utterance_rng(policy.seed, entry.utterance_id)
        lo, hi = policy.volume_range
        for k in range(policy.volume_copies):
            gain = float(rng.uniform(lo, hi))
            copies.append((f"_vol{k}", perturb_volume(audio, gain), entry.duration_s))
        for suffix, buf, duration in copies:
            uid = entry.utterance_id + suffix
            path = out / _file_name(uid)
            write_wav(buf, path)
            entries.append(ManifestEntry(uid, str(path), entry.text, entry.language, duration, entry.corpus))
    if manifest and not entries and errors:
        raise InputError(f"augmentation failed for all {len(errors)} entries")
    return AugmentResult(entries, errors)
