#!/usr/bin/env python3
"""
Tests for the character n-gram language model
"""

import math
import os
import sys

import pytest

# Add the project root to the path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from components.language_model import lm_score, load_lm, save_lm, train_ngram, word_count
from utils.errors import FormatVersionError, TransducerError
from utils.numerics import SeededRng


def test_add_one_bigram_probability():
    lm = train_ngram(["aab"], n=2, k=1.0)
    assert set(lm.vocab) == {"a", "b", "</s>"}
    assert math.exp(lm.logprob("a", ["a"])) == pytest.approx(0.4, abs=1e-12)


def test_distributions_are_normalized():
    lm = train_ngram(["the cat", "a hat", "that"], n=3, k=0.1)
    rng = SeededRng(4)
    symbols = list(lm.vocab) + ["<s>"]
    for _ in range(100):
        context = [symbols[int(i)] for i in rng.integers(0, len(symbols), size=2)]
        assert sum(lm.distribution(context).values()) == pytest.approx(1.0, abs=1e-12)


def test_empty_text_scores_sentence_end():
    lm = train_ngram(["ab", "b"], n=2, k=0.5)
    assert lm_score(lm, "") == pytest.approx(lm.logprob("</s>", ["<s>"]), abs=1e-15)


def test_incremental_matches_whole_string():
    lm = train_ngram(["abba", "baab", "ab ab"], n=3, k=0.2)
    rng = SeededRng(17)
    for _ in range(30):
        text = "".join("ab "[int(i)] for i in rng.integers(0, 3, size=int(rng.integers(0, 8))))
        state = lm.start_state()
        running = 0.0
        for sym in text:
            state, logp = lm.advance(state, sym)
            running += logp
        running += lm.final_logprob(state)
        assert running == pytest.approx(lm_score(lm, text), abs=1e-12)


def test_training_string_beats_neighbour():
    lm = train_ngram(["aab"], n=2, k=1.0)
    assert lm_score(lm, "aab") > lm_score(lm, "abb")


def test_adding_a_sentence_raises_its_score():
    rng = SeededRng(23)
    alphabet = list("ab ")

    def random_line():
        return "".join(alphabet[int(i)] for i in rng.integers(0, 3, size=int(rng.integers(1, 7))))

    gains = []
    for _ in range(20):
        corpus = [random_line() for _ in range(int(rng.integers(2, 6)))]
        # unigram: any new sentence; trigram: a sentence whose contexts are already seen
        unigram_text = random_line()
        trigram_text = corpus[int(rng.integers(0, len(corpus)))]
        for n, text in ((1, unigram_text), (3, trigram_text)):
            before = train_ngram(corpus, n=n, k=0.1, vocab=alphabet)
            after = train_ngram(corpus + [text], n=n, k=0.1, vocab=alphabet)
            gains.append(lm_score(after, text) - lm_score(before, text))
    assert min(gains) > -1e-12
    # ties need the corpus counts to match the sentence exactly
    assert sum(gain > 0 for gain in gains) >= len(gains) - 2


def test_unknown_symbol_gets_floor():
    lm = train_ngram(["ab"], n=2, k=0.5)
    assert math.isfinite(lm_score(lm, "azb"))
    assert lm_score(lm, "azb") < lm_score(lm, "ab")


def test_invalid_training_arguments():
    with pytest.raises(TransducerError):
        train_ngram([], n=2)
    with pytest.raises(TransducerError):
        train_ngram(["a"], n=0)
    with pytest.raises(TransducerError):
        train_ngram(["a"], n=2, k=0.0)


def test_save_load_round_trip(tmp_path):
    lm = train_ngram(["play the black eyed peas songs", "play songs"], n=4, k=0.1)
    path = save_lm(lm, tmp_path / "lm.txt")
    loaded = load_lm(path)
    assert loaded.order == lm.order
    assert loaded.vocab == lm.vocab
    for text in ["play", "the black eye piece songs", ""]:
        assert lm_score(loaded, text) == lm_score(lm, text)


def test_load_rejects_unknown_version(tmp_path):
    path = save_lm(train_ngram(["ab"], n=2), tmp_path / "lm.txt")
    content = path.read_text(encoding="utf-8").replace("version\t1", "version\t99")
    path.write_text(content, encoding="utf-8")
    with pytest.raises(FormatVersionError):
        load_lm(path)


def test_word_count():
    assert word_count("play the songs") == 3
    assert word_count("") == 0
    assert word_count("abc", has_boundary=False) == 3
