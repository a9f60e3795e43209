import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlc_asr_kit.decode import (
    DEFAULT_PROMPT,
    DecodeConfig,
    TableScorer,
    banned_tokens,
    beam_search,
    get_prompt,
    load_prompt_registry,
)
from mlc_asr_kit.errors import ConfigError, InputError, ScorerContractError
from mlc_asr_kit.textnorm import Language

from oracles import brute_banned, exhaustive_decode
from scorers import random_bigram_scorer, repetitive_scorer


def test_default_registry():
    reg = load_prompt_registry()
    assert set(reg.entries) == set(Language)
    for lang in Language:
        if lang.is_english:
            assert get_prompt(lang, reg) == DEFAULT_PROMPT == "Transcribe speech to text"
        else:
            assert get_prompt(lang, reg).startswith("<PLACEHOLDER")


def test_user_registry_verbatim_and_missing(tmp_path):
    french = "Transcrivez la parole en texte !"
    path = tmp_path / "prompts.json"
    path.write_text(json.dumps({"French": french}, ensure_ascii=False), encoding="utf-8")
    reg = load_prompt_registry(path)
    assert get_prompt(Language.FRENCH, reg).encode("utf-8") == french.encode("utf-8")
    with pytest.raises(ConfigError):
        get_prompt(Language.GERMAN, reg)


@pytest.mark.parametrize("doc", ['{"Klingon": "x"}', '["x"]', '{"French": 3}', "{"])
def test_bad_registry(tmp_path, doc):
    path = tmp_path / "prompts.json"
    path.write_text(doc, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_prompt_registry(path)


def test_banned_examples():
    a, b = 1, 2
    assert banned_tokens([a, b, a], 2) == {b}
    assert banned_tokens([a], 2) == set()
    assert banned_tokens([a, a, a], 1) == {a}
    assert banned_tokens([], 1) == set()
    with pytest.raises(InputError):
        banned_tokens([a], 0)


@given(st.lists(st.integers(0, 3), max_size=64), st.integers(1, 6))
def test_banned_matches_brute_force(prefix, n):
    assert banned_tokens(prefix, n) == brute_banned(prefix, n)


def test_eos_only_vocab():
    scorer = TableScorer(1, [(None, (), [-0.0])], eos_id=0)
    tokens, logprob = beam_search("anything", scorer, DecodeConfig(max_len=5, eos_id=0))
    assert tokens == () and logprob == 0.0
    scorer = TableScorer(2, [(None, (), [-0.7, -math.inf])], eos_id=0)
    assert beam_search("x", scorer, DecodeConfig(eos_id=0)) == ((), -0.7)


def test_small_oracle_equivalence(rng):
    for _ in range(30):
        vocab, max_len = int(rng.integers(2, 5)), int(rng.integers(1, 5))
        scorer = random_bigram_scorer(rng, vocab)
        cfg = DecodeConfig(beam_width=vocab**max_len, no_repeat_ngram=0, max_len=max_len, eos_id=0)
        assert beam_search("ctx", scorer, cfg) == exhaustive_decode("ctx", scorer, max_len, 0)


def test_unigram_ban_against_banned_search(rng):
    # Exhaustive search over sequences with no repeated token.
    for _ in range(20):
        vocab = 4
        scorer = repetitive_scorer(rng, vocab, order=1)
        cfg = DecodeConfig(beam_width=vocab**4, no_repeat_ngram=1, max_len=4, eos_id=0)
        tokens, logprob = beam_search("ctx", scorer, cfg)
        assert len(set(tokens)) == len(tokens)

        best = None

        def visit(seq, lp):
            nonlocal best
            vec = scorer.score(seq, "ctx")
            options = [t for t in range(vocab) if t not in seq]
            if not options:
                key = (-lp, seq)
                best = min(best, (key, seq, lp)) if best else (key, seq, lp)
                return
            for t in options:
                nseq, nlp = seq + (t,), lp + vec[t]
                if t == 0 or len(nseq) == 4:
                    key = (-nlp, nseq)
                    best = min(best, (key, nseq, nlp)) if best else (key, nseq, nlp)
                else:
                    visit(nseq, nlp)

        visit((), 0.0)
        expected = best[1][:-1] if best[1] and best[1][-1] == 0 else best[1]
        assert (tokens, logprob) == (expected, best[2])


def test_deadlock_finalizes():
    # Token 1 is the only non-EOS token and EOS is impossible; with a
    # unigram ban the second step has nothing left.
    scorer = TableScorer(2, [(None, (), [-math.inf, -0.1])], eos_id=0)
    tokens, logprob = beam_search(None, scorer, DecodeConfig(no_repeat_ngram=1, max_len=10))
    assert tokens == (1,) and logprob == pytest.approx(-0.1)


def test_tie_break_lowest_token():
    scorer = TableScorer(3, [(None, (), [-math.log(3)] * 3)], eos_id=0)
    # Every one-token sequence has the same score; EOS (id 0) is lowest.
    assert beam_search(None, scorer, DecodeConfig(max_len=1)) == ((), -math.log(3))
    assert beam_search(None, scorer, DecodeConfig(max_len=1, eos_id=2)).tokens == (0,)


def test_length_penalty():
    rows = [(None, (), [-3.0, -0.5]), (None, (1,), [-0.6, -5.0]), (None, (1, 0), [0.0, 0.0])]
    scorer = TableScorer(2, rows, eos_id=0)
    assert beam_search(None, scorer, DecodeConfig(max_len=3, no_repeat_ngram=0)).tokens == (1,)
    rows = [(None, (), [-1.0, -0.7]), (None, (1,), [-1.0, -0.7])]
    scorer = TableScorer(2, rows, eos_id=0)
    plain = beam_search(None, scorer, DecodeConfig(max_len=3, no_repeat_ngram=0))
    normed = beam_search(None, scorer, DecodeConfig(max_len=3, no_repeat_ngram=0, length_penalty=1.0))
    assert plain == ((), -1.0)
    assert len(normed.tokens) > 0


def test_contract_violations():
    class Bad:
        vocab_size = 3

        def __init__(self, vec):
            self.vec = vec

        def score(self, prefix, context):
            return self.vec

    for vec in ([0.0, -1.0], [np.nan, -1.0, -1.0], [0.5, -1.0, -1.0]):
        with pytest.raises(ScorerContractError):
            beam_search(None, Bad(vec), DecodeConfig())
    with pytest.raises(InputError):
        beam_search(None, Bad([-1.0] * 3), DecodeConfig(eos_id=3))


@pytest.mark.parametrize("kwargs", [{"beam_width": 0}, {"max_len": 0}, {"no_repeat_ngram": -1}])
def test_bad_config(kwargs):
    with pytest.raises(InputError):
        DecodeConfig(**kwargs)


def test_monotone_scores(rng):
    scorer = random_bigram_scorer(rng, 5)
    for n in range(1, 6):
        tokens, logprob = beam_search("ctx", scorer, DecodeConfig(no_repeat_ngram=n, max_len=8))
        running, prev = 0.0, 0.0
        for k, t in enumerate(tokens):
            running += scorer.score(tokens[:k], "ctx")[t]
            assert running <= prev
            prev = running
        assert logprob <= running


def test_table_scorer_lookup(tmp_path):
    doc = {
        "vocab_size": 2,
        "eos_id": 1,
        "rows": [
            {"context": None, "suffix": [], "logprobs": [-0.1, -2.4]},
            {"context": "a", "suffix": [0], "logprobs": [None, 0.0]},
        ],
    }
    path = tmp_path / "scorer.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    scorer = TableScorer.from_file(path)
    assert scorer.eos_id == 1
    assert scorer.score((0,), "a")[0] == -math.inf
    assert scorer.score((0,), "b")[0] == -0.1
    assert beam_search("a", scorer, DecodeConfig(eos_id=1)) == ((0,), -0.1)
    with pytest.raises(ConfigError):
        TableScorer(2, [(None, (), [0.0])])
    with pytest.raises(ScorerContractError):
        TableScorer(2, [("x", (), [0.0, 0.0])]).score((), "y")
