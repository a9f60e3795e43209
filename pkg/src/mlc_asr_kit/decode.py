"""Beam-search decoding over a pluggable scorer, with no-repeat-ngram bans.

The decoder never looks inside the conditioning ``context``; whatever the
scorer needs (audio embeddings, a prompt, a test label) travels through it.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Protocol, Sequence

import numpy as np

from mlc_asr_kit.errors import ConfigError, InputError, ScorerContractError
from mlc_asr_kit.textnorm import Language

DEFAULT_PROMPT = "Transcribe speech to text"


@dataclass(frozen=True)
class PromptRegistry:
    entries: Mapping[Language, str]
    source: str = "<built-in>"

    def __contains__(self, language: Language) -> bool:
        return language in self.entries


def load_prompt_registry(path: str | os.PathLike | None = None) -> PromptRegistry:
    """Read a ``{"<language tag>": "<prompt>"}`` JSON registry.

    Without a path the packaged registry is used. Its non-English entries
    are placeholders; supply the real prompt strings via your own file.
    """
    if path is None:
        text = resources.files("mlc_asr_kit").joinpath("data/prompts.json").read_text(encoding="utf-8")
        source = "<built-in>"
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"prompt registry not found: {path}") from None
        except UnicodeDecodeError as exc:
            raise ConfigError(f"prompt registry {path}: {exc}") from None
        source = str(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"prompt registry {source}: {exc}") from None
    if not isinstance(doc, dict) or not all(isinstance(v, str) for v in doc.values()):
        raise ConfigError(f"prompt registry {source}: expected a mapping of tag to prompt string")
    entries = {}
    for key, prompt in doc.items():
        try:
            entries[Language.parse(key)] = prompt
        except InputError as exc:
            raise ConfigError(f"prompt registry {source}: {exc}") from None
    return PromptRegistry(entries, source)


def get_prompt(language: Language, registry: PromptRegistry | None = None) -> str:
    if registry is None:
        registry = load_prompt_registry()
    try:
        return registry.entries[language]
    except KeyError:
        raise ConfigError(f"prompt registry {registry.source} has no entry for {language.value}") from None


def banned_tokens(prefix: Sequence[int], n: int) -> set[int]:
    """Tokens that would complete an n-gram already present in ``prefix``."""
    if n < 1:
        raise InputError(f"n-gram order must be >= 1, got {n}")
    size = len(prefix)
    if size < n - 1:
        return set()
    seq = tuple(prefix)
    head = seq[size - n + 1 :] if n > 1 else ()
    return {seq[i + n - 1] for i in range(size - n + 1) if seq[i : i + n - 1] == head}


class Scorer(Protocol):
    vocab_size: int

    def score(self, prefix: tuple[int, ...], context: Any) -> np.ndarray:
        """Next-token log-probabilities given the generated prefix."""
        ...


class TableScorer:
    """Scorer driven by a lookup table of ``(context, suffix) -> log-probs``.

    The row used for a prefix is the one with the longest matching suffix;
    a row whose context is ``None`` matches any context but loses to a
    context-specific row with the same suffix length.
    """

    def __init__(self, vocab_size: int, rows: Iterable[tuple[Any, Sequence[int], Sequence[float]]], eos_id: int = 0):
        self.vocab_size = int(vocab_size)
        self.eos_id = int(eos_id)
        self._rows: dict[tuple[Any, tuple[int, ...]], np.ndarray] = {}
        self._max_suffix = 0
        for context, suffix, logprobs in rows:
            vec = np.array([-math.inf if v is None else v for v in logprobs], dtype=np.float64)
            if vec.shape != (self.vocab_size,):
                raise ConfigError(f"scorer row for {context!r}/{list(suffix)} has {len(vec)} entries, vocab is {self.vocab_size}")
            key = (context, tuple(int(t) for t in suffix))
            if key in self._rows:
                raise ConfigError(f"duplicate scorer row for context {context!r}, suffix {list(suffix)}")
            self._rows[key] = vec
            self._max_suffix = max(self._max_suffix, len(key[1]))

    def score(self, prefix: tuple[int, ...], context: Any) -> np.ndarray:
        for width in range(min(len(prefix), self._max_suffix), -1, -1):
            suffix = tuple(prefix[len(prefix) - width :])
            for ctx in (context, None):
                row = self._rows.get((ctx, suffix))
                if row is not None:
                    return row
        raise ScorerContractError(f"no scorer row for context {context!r} and prefix {list(prefix)}")

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "TableScorer":
        """Load ``{"vocab_size", "eos_id", "rows": [{"context", "suffix", "logprobs"}]}``.

        ``null`` in a log-prob vector stands for negative infinity.
        """
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            rows = [(r.get("context"), r.get("suffix", []), r["logprobs"]) for r in doc["rows"]]
            return cls(doc["vocab_size"], rows, doc.get("eos_id", 0))
        except FileNotFoundError:
            raise ConfigError(f"scorer file not found: {path}") from None
        except (KeyError, TypeError, AttributeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"malformed scorer file {path}: {exc!r}") from None


@dataclass(frozen=True)
class DecodeConfig:
    beam_width: int = 4
    no_repeat_ngram: int = 5  # 0 disables the ban
    max_len: int = 64
    length_penalty: float = 0.0
    eos_id: int = 0

    def __post_init__(self):
        if self.beam_width < 1:
            raise InputError(f"beam_width must be >= 1, got {self.beam_width}")
        if self.no_repeat_ngram < 0:
            raise InputError(f"no_repeat_ngram must be >= 1 (or 0 to disable), got {self.no_repeat_ngram}")
        if self.max_len < 1:
            raise InputError(f"max_len must be >= 1, got {self.max_len}")


class Decoded(NamedTuple):
    tokens: tuple[int, ...]
    logprob: float


def _checked(vec: Any, vocab_size: int, prefix: tuple[int, ...]) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.shape != (vocab_size,):
        raise ScorerContractError(f"scorer returned shape {arr.shape} for prefix {list(prefix)}, expected ({vocab_size},)")
    if np.isnan(arr).any() or (arr > 0).any():
        raise ScorerContractError(f"scorer returned NaN or positive log-probabilities for prefix {list(prefix)}")
    return arr


def beam_search(context: Any, scorer: Scorer, cfg: DecodeConfig = DecodeConfig()) -> Decoded:
    """Return the best completed hypothesis and its cumulative log-probability.

    A hypothesis completes when it emits ``cfg.eos_id`` (the EOS token is
    scored but not returned), reaches ``cfg.max_len`` tokens, or has every
    next token banned. Candidates are ranked by score, ties by the token
    sequence compared lexicographically, which favours the lowest token id
    first and then the shorter sequence.
    """
    vocab = scorer.vocab_size
    if not 0 <= cfg.eos_id < vocab:
        raise InputError(f"eos_id {cfg.eos_id} outside vocabulary of size {vocab}")
    width = cfg.beam_width
    alive: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[tuple[tuple[int, ...], float]] = []
    for _ in range(cfg.max_len):
        candidates = []
        for seq, logprob in alive:
            vec = _checked(scorer.score(seq, context), vocab, seq)
            banned = banned_tokens(seq, cfg.no_repeat_ngram) if cfg.no_repeat_ngram else set()
            allowed = [t for t in np.flatnonzero(np.isfinite(vec)).tolist() if t not in banned]
            if not allowed:
                finished.append((seq, logprob))
                continue
            candidates.extend((logprob + vec[t], seq + (t,)) for t in allowed)
        candidates.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for rank, (logprob, seq) in enumerate(candidates):
            if seq[-1] == cfg.eos_id:
                if rank < width:
                    finished.append((seq, logprob))
            elif len(alive) < width:
                alive.append((seq, logprob))
            if len(alive) == width and rank >= width - 1:
                break
        if not alive:
            break
        # Scores only fall as hypotheses grow, so once a finished one is
        # strictly ahead no live hypothesis can overtake it.
        if cfg.length_penalty == 0 and finished and max(f[1] for f in finished) > alive[0][1]:
            break
    finished.extend(alive)

    def rank_key(item: tuple[tuple[int, ...], float]):
        seq, logprob = item
        score = logprob / max(len(seq), 1) ** cfg.length_penalty if cfg.length_penalty else logprob
        return (-score, seq)

    seq, logprob = min(finished, key=rank_key)
    if seq and seq[-1] == cfg.eos_id:
        seq = seq[:-1]
    return Decoded(seq, float(logprob))
