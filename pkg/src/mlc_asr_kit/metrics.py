"""Error-rate scoring: alignment counts, per-language tallies, MER, hallucinations."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from numba import njit

from mlc_asr_kit.errors import InputError
from mlc_asr_kit.textnorm import Language, Transcript, metric_for


@njit(cache=True, nogil=True)
def _align_counts(ref: np.ndarray, hyp: np.ndarray) -> tuple[int, int, int]:
    # One int64 key per cell orders alignments by (total, insertions,
    # deletions) lexicographically: key = (total * K + ins) * K + del.
    n = ref.shape[0]
    m = hyp.shape[0]
    k = max(n, m) + 1
    k2 = k * k
    ins_step = k2 + k
    del_step = k2 + 1
    prev = np.empty(m + 1, np.int64)
    cur = np.empty(m + 1, np.int64)
    for j in range(m + 1):
        prev[j] = j * ins_step
    for i in range(1, n + 1):
        cur[0] = i * del_step
        r = ref[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1] + (0 if r == hyp[j - 1] else k2)
            c = prev[j] + del_step
            if c < best:
                best = c
            c = cur[j - 1] + ins_step
            if c < best:
                best = c
            cur[j] = best
        prev, cur = cur, prev
    key = prev[m]
    total = key // k2
    ins = (key // k) % k
    dels = key % k
    return total - ins - dels, dels, ins


def intern(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> tuple[np.ndarray, np.ndarray]:
    """Map tokens to int ids in order of first appearance (ref, then hyp)."""
    ids: dict = {}
    r = np.fromiter((ids.setdefault(t, len(ids)) for t in ref), np.int64, len(ref))
    h = np.fromiter((ids.setdefault(t, len(ids)) for t in hyp), np.int64, len(hyp))
    return r, h


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    deletions: int
    insertions: int

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def __iter__(self):
        return iter((self.substitutions, self.deletions, self.insertions))


def edit_distance(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> EditCounts:
    """Minimum-cost alignment counts ``(S, D, I)`` with unit costs.

    Among alignments of equal total cost the one with fewest insertions,
    then fewest deletions, is chosen. Because ``I - D = len(hyp) - len(ref)``
    for every alignment, this also maximizes substitutions and makes the
    counts symmetric: swapping the arguments swaps ``D`` and ``I``.

    >>> tuple(edit_distance("abc", "axc"))
    (1, 0, 0)
    """
    s, d, i = _align_counts(*intern(ref, hyp))
    return EditCounts(int(s), int(d), int(i))


@dataclass(frozen=True)
class UtteranceScore:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int
    language: Language
    utterance_id: str | None = None

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def error_rate(self) -> float | None:
        """``errors / ref_len``; ``None`` for an empty reference."""
        return self.errors / self.ref_len if self.ref_len else None


def score_utterance(ref: Transcript, hyp: Transcript, utterance_id: str | None = None) -> UtteranceScore:
    if ref.language is not hyp.language:
        raise InputError(
            f"language mismatch for {utterance_id or 'utterance'}: "
            f"ref {ref.language.value}, hyp {hyp.language.value}"
        )
    s, d, i = edit_distance(ref.tokens, hyp.tokens)
    return UtteranceScore(s, d, i, len(ref.tokens), ref.language, utterance_id)


@dataclass(frozen=True)
class LanguageTally:
    error_units: int = 0
    ref_units: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    utterances: int = 0
    empty_refs: int = 0

    @property
    def error_rate(self) -> float | None:
        return self.error_units / self.ref_units if self.ref_units else None

    def __add__(self, other: "LanguageTally") -> "LanguageTally":
        return LanguageTally(
            self.error_units + other.error_units,
            self.ref_units + other.ref_units,
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.utterances + other.utterances,
            self.empty_refs + other.empty_refs,
        )

    @classmethod
    def of(cls, score: UtteranceScore) -> "LanguageTally":
        return cls(
            score.errors,
            score.ref_len,
            score.substitutions,
            score.deletions,
            score.insertions,
            1,
            int(score.ref_len == 0),
        )


@dataclass(frozen=True)
class ScoreReport:
    """Per-language error rates plus pooled and macro MER.

    ``mer_pooled`` divides all errors by all reference units; ``mer_macro``
    is the unweighted mean of the per-language rates. Languages whose
    references are all empty have no rate and are left out of the macro mean.
    """

    per_language: Mapping[Language, LanguageTally] = field(default_factory=dict)

    @property
    def mer_pooled(self) -> float | None:
        err = sum(t.error_units for t in self.per_language.values())
        ref = sum(t.ref_units for t in self.per_language.values())
        return err / ref if ref else None

    @property
    def mer_macro(self) -> float | None:
        rates = [t.error_rate for t in self.per_language.values() if t.error_rate is not None]
        return sum(rates) / len(rates) if rates else None

    def languages(self) -> list[Language]:
        return [lang for lang in Language if lang in self.per_language]

    def merge(self, other: "ScoreReport") -> "ScoreReport":
        """Combine two partial reports; associative and commutative."""
        merged = dict(self.per_language)
        for lang, tally in other.per_language.items():
            merged[lang] = merged[lang] + tally if lang in merged else tally
        return ScoreReport({lang: merged[lang] for lang in Language if lang in merged})

    def to_dict(self) -> dict:
        return {
            "per_language": {
                lang.value: {
                    "metric": metric_for(lang).value.upper(),
                    "error_rate": self.per_language[lang].error_rate,
                    "error_units": self.per_language[lang].error_units,
                    "ref_units": self.per_language[lang].ref_units,
                    "substitutions": self.per_language[lang].substitutions,
                    "deletions": self.per_language[lang].deletions,
                    "insertions": self.per_language[lang].insertions,
                    "utterances": self.per_language[lang].utterances,
                    "empty_refs": self.per_language[lang].empty_refs,
                }
                for lang in self.languages()
            },
            "mer_pooled": self.mer_pooled,
            "mer_macro": self.mer_macro,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def to_tsv(self, column: str = "System") -> str:
        """Render as a Language / rate (%) / Metric table with both MER rows."""

        def pct(x: float | None) -> str:
            return "-" if x is None else f"{100 * x:.2f}"

        lines = [f"Language\t{column}\tMetric"]
        for lang in self.languages():
            rate = self.per_language[lang].error_rate
            lines.append(f"{lang.value}\t{pct(rate)}\t{metric_for(lang).value.upper()}")
        lines.append(f"Avg. (pooled)\t{pct(self.mer_pooled)}\tMER")
        lines.append(f"Avg. (macro)\t{pct(self.mer_macro)}\tMER")
        return "\n".join(lines) + "\n"


def aggregate(scores: Iterable[UtteranceScore]) -> ScoreReport:
    """Fold utterance scores into a :class:`ScoreReport`.

    Raises:
        InputError: if ``scores`` is empty.
    """
    tallies: dict[Language, LanguageTally] = {}
    for score in scores:
        tally = LanguageTally.of(score)
        tallies[score.language] = tallies[score.language] + tally if score.language in tallies else tally
    if not tallies:
        raise InputError("cannot aggregate an empty collection of scores")
    return ScoreReport({lang: tallies[lang] for lang in Language if lang in tallies})


def report_from_rates(rates: Mapping[Language, float], ref_units: int = 10_000) -> ScoreReport:
    """Synthesize a report from per-language rates (fractions).

    Every language gets the same number of reference units, so this is
    the right tool for checking how a printed column averages.
    """
    scores = []
    for lang, rate in rates.items():
        errors = round(rate * ref_units)
        scores.append(UtteranceScore(errors, 0, 0, ref_units, lang))
    return aggregate(scores)


@dataclass(frozen=True)
class HallucinationFlag:
    utterance_id: str | None
    ngram: tuple
    repeat_count: int
    span_start: int

    @property
    def span_end(self) -> int:
        return self.span_start + len(self.ngram) * self.repeat_count

    def to_line(self) -> str:
        return f"{self.utterance_id}\t{self.span_start}\t{self.repeat_count}\t{' '.join(map(str, self.ngram))}"


def _has_period(tokens: Sequence, start: int, end: int, period: int) -> bool:
    return all(tokens[k] == tokens[k + period] for k in range(start, end - period))


def detect_hallucination(
    hyp: Sequence[Hashable],
    n_min: int = 1,
    n_max: int = 5,
    min_repeats: int = 10,
    utterance_id: str | None = None,
) -> list[HallucinationFlag]:
    """Find n-grams repeated back to back at least ``min_repeats`` times.

    For every order ``n`` the sequence is split into maximal runs with
    period ``n``; a run of length ``L`` holds ``L // n`` whole copies of its
    leading n-gram. A run is reported under the smallest order in
    ``[n_min, n_max]`` that it is periodic in, so ``["go"] * 30`` yields a
    single unigram flag rather than additional bigram and trigram flags.
    At most one flag (the one covering the longest span) is kept per start
    position.
    """
    if not 1 <= n_min <= n_max:
        raise InputError(f"need 1 <= n_min <= n_max, got n_min={n_min}, n_max={n_max}")
    if min_repeats < 2:
        raise InputError(f"min_repeats must be >= 2, got {min_repeats}")
    tokens = list(hyp)
    length = len(tokens)
    by_start: dict[int, HallucinationFlag] = {}
    for n in range(n_min, n_max + 1):
        i = 0
        while i + n < length:
            if tokens[i] != tokens[i + n]:
                i += 1
                continue
            j = i
            while j + n < length and tokens[j] == tokens[j + n]:
                j += 1
            end = j + n  # run covers tokens[i:end]
            repeats = (end - i) // n
            if repeats >= min_repeats and not any(
                _has_period(tokens, i, end, p) for p in range(n_min, n)
            ):
                flag = HallucinationFlag(utterance_id, tuple(tokens[i : i + n]), repeats, i)
                old = by_start.get(i)
                if old is None or flag.span_end - i > old.span_end - i:
                    by_start[i] = flag
            i = j + 1
    return [by_start[k] for k in sorted(by_start)]
