"""JSON-lines utterance manifests, multi-corpus merging and hour accounting."""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from mlc_asr_kit.errors import InputError
from mlc_asr_kit.textnorm import Language

FIELDS = ("utterance_id", "audio_path", "text", "language", "duration_s", "corpus")


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    audio_path: str
    text: str
    language: Language
    duration_s: float
    corpus: str

    def to_json(self) -> str:
        record = asdict(self)
        record["language"] = self.language.value
        return json.dumps(record, ensure_ascii=False)


class ManifestError(InputError):
    """Validation failures for a manifest, one diagnostic per problem."""

    def __init__(self, path: str, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__(f"{path}: {len(self.problems)} invalid record(s)\n" + "\n".join(self.problems))


def _parse_record(record: object) -> ManifestEntry:
    if not isinstance(record, dict):
        raise ValueError("record is not a JSON object")
    missing = [f for f in FIELDS if f not in record]
    if missing:
        raise ValueError(f"missing field(s) {', '.join(missing)}")
    extra = sorted(set(record) - set(FIELDS))
    if extra:
        raise ValueError(f"unknown field(s) {', '.join(extra)}")
    for name in ("utterance_id", "audio_path", "text", "corpus", "language"):
        if not isinstance(record[name], str):
            raise ValueError(f"{name} must be a string")
    if not record["utterance_id"]:
        raise ValueError("utterance_id is empty")
    duration = record["duration_s"]
    if isinstance(duration, bool) or not isinstance(duration, (int, float)):
        raise ValueError("duration_s must be a number")
    if not (math.isfinite(duration) and duration > 0):
        raise ValueError(f"duration_s must be positive, got {duration}")
    try:
        language = Language.parse(record["language"])
    except InputError as exc:
        raise ValueError(str(exc)) from None
    return ManifestEntry(
        record["utterance_id"], record["audio_path"], record["text"], language, duration, record["corpus"]
    )


def parse_manifest(lines: Iterable[str], source: str = "<manifest>") -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    problems: list[str] = []
    first_line: dict[str, int] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            entry = _parse_record(json.loads(line))
        except json.JSONDecodeError as exc:
            problems.append(f"line {lineno}: malformed JSON: {exc.msg}")
            continue
        except ValueError as exc:
            problems.append(f"line {lineno}: {exc}")
            continue
        if entry.utterance_id in first_line:
            problems.append(
                f"line {lineno}: duplicate utterance_id {entry.utterance_id!r} (first seen on line {first_line[entry.utterance_id]})"
            )
            continue
        first_line[entry.utterance_id] = lineno
        entries.append(entry)
    if problems:
        raise ManifestError(source, problems)
    return entries


def load_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    """Load and validate a manifest; all problems are reported together.

    Raises:
        ManifestError: with one line-numbered diagnostic per bad record.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"manifest not found: {path}") from None
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not UTF-8 ({exc.reason} at byte {exc.start})") from None
    return parse_manifest(text.splitlines(), str(path))


def dumps_manifest(entries: Iterable[ManifestEntry]) -> str:
    return "".join(e.to_json() + "\n" for e in entries)


def write_manifest(entries: Iterable[ManifestEntry], path: str | os.PathLike) -> None:
    Path(path).write_text(dumps_manifest(entries), encoding="utf-8")


def merge(manifests: Sequence[Sequence[ManifestEntry]], dedup: bool = False) -> list[ManifestEntry]:
    """Concatenate manifests, prefixing every id with its corpus.

    Ids become ``corpus/original_id``. If one corpus name arrives from more
    than one input manifest (for instance a manifest merged with itself),
    the prefix for input ``i`` (1-based) becomes ``corpus@i`` so the ids stay
    distinct. With ``dedup``, later entries that repeat an earlier
    ``(audio_path, text)`` pair are dropped before ids are qualified.

    Raises:
        InputError: if two qualified ids still collide.
    """
    kept: list[tuple[int, ManifestEntry]] = []
    seen: set[tuple[str, str]] = set()
    for index, manifest in enumerate(manifests, start=1):
        for entry in manifest:
            key = (entry.audio_path, entry.text)
            if dedup and key in seen:
                continue
            seen.add(key)
            kept.append((index, entry))
    sources: dict[str, set[int]] = {}
    for index, entry in kept:
        sources.setdefault(entry.corpus, set()).add(index)
    merged: list[ManifestEntry] = []
    owner: dict[str, int] = {}
    for index, entry in kept:
        prefix = entry.corpus if len(sources[entry.corpus]) == 1 else f"{entry.corpus}@{index}"
        uid = f"{prefix}/{entry.utterance_id}"
        if uid in owner:
            raise InputError(f"qualified id {uid!r} collides between inputs {owner[uid]} and {index}")
        owner[uid] = index
        merged.append(ManifestEntry(uid, entry.audio_path, entry.text, entry.language, entry.duration_s, entry.corpus))
    return merged


@dataclass(frozen=True)
class DurationReport:
    """Seconds per (corpus, language) cell; hour views are derived."""

    seconds: Mapping[tuple[str, Language], float] = field(default_factory=dict)

    @property
    def corpora(self) -> list[str]:
        return sorted({c for c, _ in self.seconds})

    @property
    def languages(self) -> list[Language]:
        present = {lang for _, lang in self.seconds}
        return [lang for lang in Language if lang in present]

    def cell_hours(self, corpus: str, language: Language) -> float:
        return self.seconds.get((corpus, language), 0.0) / 3600

    def language_hours(self) -> dict[Language, float]:
        return {
            lang: math.fsum(s for (_, l), s in self.seconds.items() if l is lang) / 3600 for lang in self.languages
        }

    def corpus_hours(self) -> dict[str, float]:
        return {c: math.fsum(s for (k, _), s in self.seconds.items() if k == c) / 3600 for c in self.corpora}

    @property
    def total_hours(self) -> float:
        return math.fsum(self.seconds.values()) / 3600

    def merge(self, other: "DurationReport") -> "DurationReport":
        cells = Counter(self.seconds)
        for key, value in other.seconds.items():
            cells[key] = cells.get(key, 0.0) + value
        return DurationReport(dict(cells))

    def to_dict(self) -> dict:
        return {
            "cells": [
                {"corpus": c, "language": lang.value, "hours": round(self.cell_hours(c, lang), 1)}
                for c in self.corpora
                for lang in self.languages
                if (c, lang) in self.seconds
            ],
            "per_language": {lang.value: round(h, 1) for lang, h in self.language_hours().items()},
            "per_corpus": {c: round(h, 1) for c, h in self.corpus_hours().items()},
            "total_hours": round(self.total_hours, 1),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def to_tsv(self) -> str:
        """Rows are corpora, columns languages, hours to one decimal."""
        langs = self.languages
        lines = ["corpus\t" + "\t".join(lang.value for lang in langs) + "\ttotal"]
        for corpus, hours in self.corpus_hours().items():
            cells = [
                f"{self.cell_hours(corpus, lang):.1f}" if (corpus, lang) in self.seconds else "-" for lang in langs
            ]
            lines.append(f"{corpus}\t" + "\t".join(cells) + f"\t{hours:.1f}")
        per_lang = self.language_hours()
        lines.append("total\t" + "\t".join(f"{per_lang[lang]:.1f}" for lang in langs) + f"\t{self.total_hours:.1f}")
        return "\n".join(lines) + "\n"


def duration_report(entries: Iterable[ManifestEntry]) -> DurationReport:
    buckets: dict[tuple[str, Language], list[float]] = {}
    for entry in entries:
        buckets.setdefault((entry.corpus, entry.language), []).append(entry.duration_s)
    return DurationReport({key: math.fsum(values) for key, values in sorted(buckets.items())})
