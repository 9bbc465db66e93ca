#!/usr/bin/env python3
"""
Tests for greedy decoding, beam search, coverage and LM rescoring
"""

import itertools
import math
import os
import sys

import numpy as np
import pytest

# Add the project root to the path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from components.decoders import (
    Hypothesis,
    attention_beam,
    attention_greedy,
    coverage_score,
    ctc_greedy,
    ctc_prefix_beam,
    exhaustive_search,
    rank,
    rescore_with_lm,
    rnnt_beam,
    rnnt_greedy,
)
from components.language_model import lm_score, train_ngram
from components.losses import Alphabet, ctc_loss, ctc_min_frames, rnnt_loss
from config.settings import DecodeConfig
from utils.errors import GuardExceededError, TransducerError
from utils.numerics import SeededRng, log_softmax


def _all_sequences(vocab, max_len):
    for length in range(max_len + 1):
        yield from itertools.product(range(vocab), repeat=length)


class TableRnntScorer:
    """Prediction network stand-in: logits looked up by (frame, prefix)."""

    def __init__(self, n_frames, vocab, max_len, seed=0, blank_bias=0.0):
        rng = SeededRng(seed)
        self.n_frames = n_frames
        self.vocab_size = vocab
        self.blank_id = vocab
        self.sos_id = vocab
        self.eos_id = None
        self.table = {}
        for t in range(n_frames):
            for prefix in _all_sequences(vocab, max_len):
                logits = rng.normal(scale=1.5, size=vocab + 1)
                logits[vocab] += blank_bias
                self.table[(t, prefix)] = logits

    def start(self):
        return (0, ())

    def step(self, state, token):
        frame, prefix = state
        new_state = (frame + 1, prefix) if token == self.blank_id else (frame, prefix + (token,))
        return new_state, None

    def distribution(self, state):
        return log_softmax(self.table[state])

    def joint_for(self, labels):
        labels = tuple(labels)
        return np.stack([
            np.stack([self.table[(t, labels[:u])] for u in range(len(labels) + 1)])
            for t in range(self.n_frames)
        ])


class TableAttentionScorer:
    """Attention decoder stand-in over V symbols plus sos and eos."""

    def __init__(self, vocab, max_len, n_frames=3, seed=0, eos_bias=0.0):
        rng = SeededRng(seed)
        self.vocab_size = vocab
        self.sos_id = vocab
        self.eos_id = vocab + 1
        self.n_frames = n_frames
        self.table = {}
        for prefix in _all_sequences(vocab, max_len + 1):
            logits = rng.normal(size=vocab + 2)
            logits[self.sos_id] = -30.0
            logits[self.eos_id] += eos_bias
            self.table[prefix] = logits

    def start(self):
        return ()

    def step(self, state, token):
        return state + (token,), None

    def distribution(self, state):
        return log_softmax(self.table[state])

    def attention(self, state):
        return np.full(self.n_frames, 1.0 / self.n_frames)

    def sequence_logprob(self, tokens):
        total = 0.0
        for u, token in enumerate(tokens):
            total += self.distribution(tuple(tokens[:u]))[token]
        return total + self.distribution(tuple(tokens))[self.eos_id]


class TestCtcDecoding:
    def test_greedy_collapses_argmax_path(self):
        path = [0, 0, 1, 2, 1]
        logits = np.zeros((5, 3))
        logits[np.arange(5), path] = 5.0
        assert ctc_greedy(logits) == [0, 1, 1]
        assert ctc_greedy(np.tile([0.0, 0.0, 3.0], (4, 1))) == []

    def test_wide_beam_matches_exhaustive(self):
        rng = SeededRng(40)
        cfg = DecodeConfig(beam_width=64)
        for _ in range(30):
            n_frames = int(rng.integers(1, 5))
            logits = rng.normal(scale=2.0, size=(n_frames, 3))

            def score(seq):
                if ctc_min_frames(seq) > n_frames:
                    return -math.inf
                return -ctc_loss(logits, list(seq)).loss

            best, best_score = exhaustive_search(score, [0, 1], n_frames)
            top = ctc_prefix_beam(logits, None, cfg)[0]
            assert top.tokens == best
            assert top.log_p_model == pytest.approx(best_score, abs=1e-9)

    def test_narrow_beam_is_a_lower_bound(self):
        rng = SeededRng(41)
        for _ in range(10):
            logits = rng.normal(scale=2.0, size=(4, 3))
            top = ctc_prefix_beam(logits, None, DecodeConfig(beam_width=1))[0]
            _, best_score = exhaustive_search(
                lambda s: -ctc_loss(logits, list(s)).loss if ctc_min_frames(s) <= 4 else -math.inf, [0, 1], 4)
            assert top.score(DecodeConfig()) <= best_score + 1e-12

    def test_wider_beam_never_lowers_the_top_score(self):
        rng = SeededRng(42)
        widths = (1, 2, 3, 4, 8, 64)
        for _ in range(20):
            logits = rng.normal(scale=2.0, size=(4, 3))
            scores = [ctc_prefix_beam(logits, None, DecodeConfig(beam_width=w))[0].log_p_model for w in widths]
            for narrow, wide in zip(scores, scores[1:]):
                assert wide >= narrow - 1e-12

    def test_large_lm_weight_breaks_tie(self):
        alphabet = Alphabet.from_symbols("ab")
        lm = train_ngram(["b", "bb"], n=2, k=0.1)
        logits = np.array([[0.0, 0.0, -50.0]])
        top = ctc_prefix_beam(logits, lm, DecodeConfig(beam_width=4, alpha=10.0), alphabet)[0]
        assert top.text(alphabet) == "b"

    def test_lm_needs_alphabet(self):
        lm = train_ngram(["a"], n=1)
        with pytest.raises(TransducerError):
            ctc_prefix_beam(np.zeros((2, 2)), lm, DecodeConfig())


class TestRnntDecoding:
    def test_wide_beam_matches_enumeration(self):
        for seed in range(30):
            scorer = TableRnntScorer(n_frames=2, vocab=2, max_len=2, seed=seed)
            cfg = DecodeConfig(beam_width=64, max_symbols_per_step=2, max_output_len=2)
            top = rnnt_beam(np.zeros((2, 1)), scorer, cfg)[0]
            scores = {seq: -rnnt_loss(scorer.joint_for(seq), list(seq)).loss
                      for seq in _all_sequences(2, 2)}
            best = max(scores, key=lambda s: (scores[s], -len(s)))
            assert top.tokens == best
            # merged prefixes carry the full marginal over their alignments
            assert top.log_p_model == pytest.approx(scores[best], abs=1e-9)

    def test_certain_blank_outputs_nothing(self):
        scorer = TableRnntScorer(n_frames=3, vocab=2, max_len=2, blank_bias=60.0)
        cfg = DecodeConfig(beam_width=4, max_symbols_per_step=2, max_output_len=2)
        assert rnnt_beam(np.zeros((3, 1)), scorer, cfg)[0].tokens == ()
        assert rnnt_greedy(np.zeros((3, 1)), scorer, cfg).tokens == ()

    def test_greedy_respects_output_cap(self):
        scorer = TableRnntScorer(n_frames=2, vocab=2, max_len=2, blank_bias=-60.0)
        cfg = DecodeConfig(beam_width=2, max_symbols_per_step=5, max_output_len=2)
        hyp = rnnt_greedy(np.zeros((2, 1)), scorer, cfg)
        assert len(hyp.tokens) == 2
        assert hyp.truncated


class TestAttentionDecoding:
    def test_wide_beam_matches_exhaustive(self):
        for seed in range(30):
            scorer = TableAttentionScorer(vocab=2, max_len=3, seed=seed)
            cfg = DecodeConfig(beam_width=64, max_output_len=3, gamma=0.0, beta_cov=0.0)
            top = attention_beam(scorer, cfg)[0]
            best, best_score = exhaustive_search(scorer.sequence_logprob, [0, 1], 3)
            assert top.tokens == best
            assert top.log_p_model == pytest.approx(best_score, abs=1e-12)

    def test_certain_eos_outputs_nothing(self):
        scorer = TableAttentionScorer(vocab=2, max_len=3, eos_bias=60.0)
        cfg = DecodeConfig(beam_width=4, max_output_len=3)
        assert attention_beam(scorer, cfg)[0].tokens == ()
        assert attention_greedy(scorer, cfg).tokens == ()

    def test_greedy_flags_unterminated(self):
        scorer = TableAttentionScorer(vocab=2, max_len=3, eos_bias=-60.0)
        hyp = attention_greedy(scorer, DecodeConfig(max_output_len=3))
        assert hyp.unterminated
        assert len(hyp.tokens) == 3

    def test_beam_flags_unterminated(self):
        scorer = TableAttentionScorer(vocab=2, max_len=3, eos_bias=-60.0)
        beam = attention_beam(scorer, DecodeConfig(beam_width=2, max_output_len=3))
        assert all(hyp.unterminated for hyp in beam)
        assert all(len(hyp.tokens) == 3 for hyp in beam)
        assert beam[0].log_p_model > -60.0

    def test_width_one_beam_follows_greedy(self):
        cfg = DecodeConfig(beam_width=1, max_output_len=3, gamma=0.0, beta_cov=0.0)
        for seed in range(30):
            scorer = TableAttentionScorer(vocab=2, max_len=3, seed=seed)
            greedy = attention_greedy(scorer, cfg)
            top = attention_beam(scorer, cfg)[0]
            assert top.tokens == greedy.tokens
            assert top.unterminated == greedy.unterminated
            assert top.log_p_model == pytest.approx(greedy.log_p_model, abs=1e-12)

    def test_length_normalization_prefers_longer(self):
        cfg = DecodeConfig.length_norm_only(beta_cov=2.0)
        assert (cfg.gamma, cfg.beta_cov) == (1.0, 0.0)
        short = Hypothesis(tokens=(0,), log_p_model=-2.0, kind="attention", alive=False)
        long = Hypothesis(tokens=(0, 0, 0), log_p_model=-2.0, kind="attention", alive=False)
        assert short.output_length() == 2
        assert long.output_length() == 4
        assert rank([short, long], cfg)[0] is long
        assert rank([short, long], DecodeConfig(gamma=0.0))[0] is short

    def test_coverage_examples(self):
        assert coverage_score(np.eye(3)) == pytest.approx(0.0, abs=1e-15)
        assert coverage_score([[0.5, 0.5], [0.5, 0.5]]) == pytest.approx(0.0, abs=1e-15)
        focused = np.array([[1.0, 0.0, 0.0, 0.0]] * 2)
        assert coverage_score(focused) == pytest.approx(3 * math.log(1e-10))


class TestRescoring:
    def _beam(self, alphabet):
        return [
            Hypothesis(tokens=tuple(alphabet.encode("play the black eye piece songs")), log_p_model=-4.00,
                       kind="rnnt", alive=False),
            Hypothesis(tokens=tuple(alphabet.encode("play the black eyed peas songs")), log_p_model=-4.05,
                       kind="rnnt", alive=False),
            Hypothesis(tokens=tuple(alphabet.encode("play the back eyed peas songs")), log_p_model=-6.0,
                       kind="rnnt", alive=False),
        ]

    def _setup(self):
        alphabet = Alphabet.from_symbols(sorted(set("play the black eye piece songs eyed peas")))
        lm = train_ngram(["play the black eyed peas songs", "play some songs", "the black eyed peas"], n=4, k=0.1)
        return alphabet, lm

    def test_zero_weight_keeps_order(self):
        alphabet, lm = self._setup()
        cfg = DecodeConfig()
        beam = rank(self._beam(alphabet), cfg)
        rescored = rescore_with_lm(beam, lm, 0.0, cfg, alphabet)
        assert [h.tokens for h in rescored] == [h.tokens for h in beam]

    def test_lm_promotes_the_seen_phrase(self):
        alphabet, lm = self._setup()
        cfg = DecodeConfig()
        rescored = rescore_with_lm(rank(self._beam(alphabet), cfg), lm, 1.0, cfg, alphabet)
        assert rescored[0].text(alphabet) == "play the black eyed peas songs"

    def test_huge_weight_follows_lm_order(self):
        alphabet, lm = self._setup()
        cfg = DecodeConfig()
        rescored = rescore_with_lm(self._beam(alphabet), lm, 1e6, cfg, alphabet)
        lm_scores = [lm_score(lm, h.text(alphabet)) for h in rescored]
        assert lm_scores == sorted(lm_scores, reverse=True)

    def test_empty_beam_rejected(self):
        alphabet, lm = self._setup()
        with pytest.raises(TransducerError):
            rescore_with_lm([], lm, 1.0, DecodeConfig(), alphabet)


class TestExhaustiveSearch:
    def test_enumerates_every_sequence(self):
        seen = []

        def score(seq):
            seen.append(seq)
            return 0.0

        exhaustive_search(score, [0], 2)
        assert seen == [(), (0,), (0, 0)]

    def test_negative_length_prefers_empty(self):
        assert exhaustive_search(lambda s: -len(s), [0, 1], 3) == ((), 0)

    def test_guard(self):
        with pytest.raises(GuardExceededError):
            exhaustive_search(lambda s: 0.0, [0, 1, 2, 3], 10)
