"""Language tags, text normalization and tokenization for scoring.

Each language is scored either over words (WER) or over extended grapheme
clusters (CER). Normalization rules are deliberately conventional and
configurable through a JSON language-config file::

    {"Japanese": {"metric": "cer", "mode": "char", "punctuation": "、。"}}

Fields omitted from an entry keep their built-in default.
"""

from __future__ import annotations

import enum
import json
import os
import string
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import regex

from mlc_asr_kit.errors import ConfigError, InputError, TextEncodingError

LANG_CONFIG_ENV = "MLC_ASR_KIT_LANG_CONFIG"


class Language(str, enum.Enum):
    """The eleven challenge languages, English split into five accents."""

    ENGLISH_AMERICAN = "English-American"
    ENGLISH_AUSTRALIAN = "English-Australian"
    ENGLISH_BRITISH = "English-British"
    ENGLISH_FILIPINO = "English-Filipino"
    ENGLISH_INDIAN = "English-Indian"
    FRENCH = "French"
    GERMAN = "German"
    ITALIAN = "Italian"
    JAPANESE = "Japanese"
    KOREAN = "Korean"
    PORTUGUESE = "Portuguese"
    RUSSIAN = "Russian"
    SPANISH = "Spanish"
    THAI = "Thai"
    VIETNAMESE = "Vietnamese"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "Language":
        """Parse a tag such as ``"English-Indian"`` (case-insensitive).

        Raises:
            InputError: for anything that is not one of the fifteen tags.
        """
        key = text.strip().casefold()
        for lang in cls:
            if lang.value.casefold() == key:
                return lang
        raise InputError(f"unknown language tag {text!r}")

    @property
    def is_english(self) -> bool:
        return self.value.startswith("English-")


class Metric(str, enum.Enum):
    WER = "wer"
    CER = "cer"


class Mode(str, enum.Enum):
    WORD = "word"
    CHAR = "char"


_CER_LANGUAGES = frozenset({Language.JAPANESE, Language.KOREAN, Language.THAI})

# Apostrophes and hyphens are word-internal in most of the word-mode
# languages ("don't", "l'homme", "Baden-Baden"), so they are kept.
DEFAULT_PUNCTUATION = (
    "".join(c for c in string.punctuation if c not in "'-")
    + "¡¿«»‘“”„‚‹›"
    + "…–—·"
    + "、。「」『』【】〈〉《》"
    + "・〜～！（），．：；？"
)


def metric_for(language: Language) -> Metric:
    """CER for Japanese, Korean and Thai; WER for every other tag."""
    return Metric.CER if language in _CER_LANGUAGES else Metric.WER


@dataclass(frozen=True)
class LanguageConfig:
    metric: Metric
    mode: Mode
    punctuation: str = DEFAULT_PUNCTUATION


def _default_entry(language: Language) -> LanguageConfig:
    metric = metric_for(language)
    mode = Mode.CHAR if metric is Metric.CER else Mode.WORD
    return LanguageConfig(metric=metric, mode=mode)


@dataclass(frozen=True)
class LanguageTable:
    """Per-language scoring configuration, complete over all tags."""

    entries: Mapping[Language, LanguageConfig] = field(
        default_factory=lambda: {lang: _default_entry(lang) for lang in Language}
    )

    def __getitem__(self, language: Language) -> LanguageConfig:
        return self.entries[language]

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Mapping[str, str]]) -> "LanguageTable":
        entries = {lang: _default_entry(lang) for lang in Language}
        if not isinstance(doc, Mapping):
            raise ConfigError("language config must be a mapping of language tag to entry")
        for key, raw in doc.items():
            try:
                lang = Language.parse(key)
            except InputError as exc:
                raise ConfigError(f"language config: {exc}") from None
            if not isinstance(raw, Mapping):
                raise ConfigError(f"language config entry for {key!r} must be a mapping")
            unknown = set(raw) - {"metric", "mode", "punctuation"}
            if unknown:
                raise ConfigError(f"language config entry {key!r}: unknown fields {sorted(unknown)}")
            updates = {}
            try:
                if "metric" in raw:
                    updates["metric"] = Metric(str(raw["metric"]).lower())
                if "mode" in raw:
                    updates["mode"] = Mode(str(raw["mode"]).lower())
            except ValueError as exc:
                raise ConfigError(f"language config entry {key!r}: {exc}") from None
            if "punctuation" in raw:
                if not isinstance(raw["punctuation"], str):
                    raise ConfigError(f"language config entry {key!r}: punctuation must be a string")
                updates["punctuation"] = raw["punctuation"]
            entries[lang] = replace(entries[lang], **updates)
        return cls(entries)


DEFAULT_TABLE = LanguageTable()


def load_language_table(path: str | os.PathLike | None = None) -> LanguageTable:
    """Load a language config, falling back to ``$MLC_ASR_KIT_LANG_CONFIG``.

    With neither a path nor the environment variable set, the built-in
    defaults are returned.
    """
    if path is None:
        path = os.environ.get(LANG_CONFIG_ENV) or None
    if path is None:
        return DEFAULT_TABLE
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"language config not found: {path}") from None
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"language config {path}: {exc}") from None
    return LanguageTable.from_mapping(doc)


def _as_text(raw: str | bytes) -> str:
    if isinstance(raw, bytes):
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TextEncodingError(f"invalid UTF-8: {exc.reason}", exc.start) from None
    try:
        raw.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise TextEncodingError(f"unencodable code point: {exc.reason}", exc.start) from None
    return raw


def normalize(
    raw: str | bytes, language: Language, table: LanguageTable = DEFAULT_TABLE
) -> str:
    """Normalize text for scoring.

    Applies NFC, case-folds word-mode languages, deletes the configured
    punctuation characters and collapses whitespace. The result is a fixed
    point: ``normalize(normalize(x)) == normalize(x)``.

    Raises:
        TextEncodingError: if ``raw`` is not valid UTF-8 text.
    """
    cfg = table[language]
    text = unicodedata.normalize("NFC", _as_text(raw))
    if cfg.mode is Mode.WORD:
        text = text.casefold()
    if cfg.punctuation:
        text = text.translate({ord(c): None for c in cfg.punctuation})
    # Deleting characters can bring a base letter next to a combining mark.
    text = unicodedata.normalize("NFC", text)
    return " ".join(text.split())


_GRAPHEME = regex.compile(r"\X")


def tokenize(
    normalized: str, language: Language, table: LanguageTable = DEFAULT_TABLE
) -> list[str]:
    """Split normalized text into words or extended grapheme clusters."""
    if table[language].mode is Mode.WORD:
        return normalized.split(" ") if normalized else []
    return _GRAPHEME.findall("".join(normalized.split()))


@dataclass(frozen=True)
class Transcript:
    raw: str
    normalized: str
    tokens: tuple[str, ...]
    language: Language

    @classmethod
    def from_text(
        cls, raw: str | bytes, language: Language, table: LanguageTable = DEFAULT_TABLE
    ) -> "Transcript":
        text = _as_text(raw)
        norm = normalize(text, language, table)
        return cls(text, norm, tuple(tokenize(norm, language, table)), language)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], language: Language) -> "Transcript":
        """Build a transcript from pre-tokenized units (no normalization)."""
        tokens = tuple(tokens)
        joined = ("" if metric_for(language) is Metric.CER else " ").join(tokens)
        return cls(joined, joined, tokens, language)
