"""Greedy and beam-search inference for the three transducers.

Search objectives:

* CTC prefix beam:   log P_ctc(y) + alpha * log P_lm(y) + beta_wc * words(y)
* RNN-T beam:        log P_rnnt(y), no length normalization
* attention beam:    log P_attn(y) / |y|^gamma + beta_cov * cov(alpha)

``rescore_with_lm`` adds ``lam * log P_lm(y)`` to a finished beam. Rankings
break ties by higher score, then shorter output, then lexicographic ids.
"""

import itertools
import math
import os
import sys
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.app_config import AppConfig
from config.settings import DecodeConfig
from components.language_model import NGramLM, lm_score, word_count
from components.losses import Alphabet, ctc_collapse
from utils.errors import GuardExceededError, TransducerError
from utils.numerics import log_softmax

NEG_INF = -math.inf


class StepScorer(Protocol):
    """Incremental view of a decoder network over one utterance.

    States are immutable values: stepping never modifies the state passed in,
    so any state can be branched as often as the search needs. Scorers also
    expose ``blank_id`` (RNN-T), ``sos_id``, ``eos_id``, ``vocab_size``,
    ``n_frames`` and, for attention, ``attention(state)`` returning the alpha
    row that produced ``distribution(state)``.
    """

    def start(self) -> Any: ...

    def step(self, state: Any, token: int) -> Tuple[Any, np.ndarray]: ...

    def distribution(self, state: Any) -> np.ndarray: ...


@dataclass
class Hypothesis:
    tokens: Tuple[int, ...]
    log_p_model: float
    kind: str
    log_p_lm: float = 0.0
    coverage: float = 0.0
    word_count: int = 0
    state: Any = None
    alive: bool = True
    log_p_rescore: float = 0.0
    rescore_weight: float = 0.0
    attn_mass: Optional[np.ndarray] = field(default=None, repr=False)
    truncated: bool = False
    unterminated: bool = False

    def output_length(self) -> int:
        """|y| for length normalization: emitted steps, counting eos once finished."""
        return max(len(self.tokens) + (0 if self.alive else 1), 1)

    def score(self, cfg: DecodeConfig) -> float:
        """Search objective, recomputed from the stored components."""
        if self.kind == "ctc":
            return self.log_p_model + cfg.alpha * self.log_p_lm + cfg.beta_wc * self.word_count
        if self.kind == "attention":
            return self.log_p_model / (self.output_length() ** cfg.gamma) + cfg.beta_cov * self.coverage
        return self.log_p_model

    def final_score(self, cfg: DecodeConfig) -> float:
        return self.score(cfg) + self.rescore_weight * self.log_p_rescore

    def text(self, alphabet: Alphabet) -> str:
        return alphabet.decode(self.tokens)


def rank(hyps: Sequence[Hypothesis], cfg: DecodeConfig) -> List[Hypothesis]:
    return sorted(hyps, key=lambda h: (-h.final_score(cfg), len(h.tokens), h.tokens))


def _ranked_keys(scores: Dict[Tuple[int, ...], float], width: int) -> List[Tuple[int, ...]]:
    return sorted(scores, key=lambda p: (-scores[p], len(p), p))[:width]


# ---------------------------------------------------------------------------
# CTC
# ---------------------------------------------------------------------------

def ctc_greedy(logits) -> List[int]:
    """Per-frame argmax followed by mapping B."""
    arr = np.asarray(logits, dtype=np.float64)
    blank = arr.shape[1] - 1
    return ctc_collapse(np.argmax(arr, axis=1).tolist(), blank)


class _PrefixLM:
    """Caches partial LM scores and word counts per prefix."""

    def __init__(self, lm: Optional[NGramLM], alphabet: Optional[Alphabet]):
        self.lm = lm
        self.alphabet = alphabet
        self.has_boundary = alphabet is not None and AppConfig.WORD_BOUNDARY in alphabet.symbols
        self._cache: Dict[Tuple[int, ...], Tuple[Any, float]] = {}
        if lm is not None:
            self._cache[()] = (lm.start_state(), 0.0)

    def partial(self, prefix: Tuple[int, ...]) -> float:
        if self.lm is None:
            return 0.0
        return self._entry(prefix)[1]

    def _entry(self, prefix: Tuple[int, ...]) -> Tuple[Any, float]:
        if prefix not in self._cache:
            state, score = self._entry(prefix[:-1])
            new_state, logp = self.lm.advance(state, self.alphabet.symbols[prefix[-1]])
            self._cache[prefix] = (new_state, score + logp)
        return self._cache[prefix]

    def full(self, prefix: Tuple[int, ...]) -> float:
        if self.lm is None:
            return 0.0
        return lm_score(self.lm, self.alphabet.decode(prefix))

    def words(self, prefix: Tuple[int, ...]) -> int:
        if self.alphabet is None:
            return len(prefix)
        return word_count(self.alphabet.decode(prefix), has_boundary=self.has_boundary)


def ctc_prefix_beam(logits, lm: Optional[NGramLM], cfg: DecodeConfig,
                    alphabet: Optional[Alphabet] = None) -> List[Hypothesis]:
    """Prefix beam search keeping (blank-ending, symbol-ending) mass per prefix."""
    if lm is not None and alphabet is None:
        raise TransducerError("LM fusion needs the alphabet to map ids to symbols")
    log_probs = log_softmax(np.asarray(logits, dtype=np.float64), axis=1)
    n_frames, n_classes = log_probs.shape
    blank = n_classes - 1
    prefix_lm = _PrefixLM(lm, alphabet)

    def objective(prefix, masses) -> float:
        return (np.logaddexp(*masses) + cfg.alpha * prefix_lm.partial(prefix)
                + cfg.beta_wc * prefix_lm.words(prefix))

    beams: Dict[Tuple[int, ...], Tuple[float, float]] = {(): (0.0, NEG_INF)}
    for t in range(n_frames):
        lp = log_probs[t]
        nxt: Dict[Tuple[int, ...], List[float]] = defaultdict(lambda: [NEG_INF, NEG_INF])
        for prefix, (p_b, p_nb) in beams.items():
            total = np.logaddexp(p_b, p_nb)
            entry = nxt[prefix]
            entry[0] = np.logaddexp(entry[0], total + lp[blank])
            last = prefix[-1] if prefix else None
            for c in range(blank):
                extended = prefix + (c,)
                if c == last:
                    nxt[extended][1] = np.logaddexp(nxt[extended][1], p_b + lp[c])
                    nxt[prefix][1] = np.logaddexp(nxt[prefix][1], p_nb + lp[c])
                else:
                    nxt[extended][1] = np.logaddexp(nxt[extended][1], total + lp[c])
        scores = {prefix: objective(prefix, masses) for prefix, masses in nxt.items()}
        beams = {prefix: tuple(nxt[prefix]) for prefix in _ranked_keys(scores, cfg.beam_width)}

    if () not in beams:
        # the empty output survives as a fallback with its exact all-blank mass
        beams[()] = (float(log_probs[:, blank].sum()), NEG_INF)

    hyps = [
        Hypothesis(
            tokens=prefix,
            log_p_model=float(np.logaddexp(p_b, p_nb)),
            kind="ctc",
            log_p_lm=prefix_lm.full(prefix),
            word_count=prefix_lm.words(prefix),
        )
        for prefix, (p_b, p_nb) in beams.items()
    ]
    return rank(hyps, cfg)


# ---------------------------------------------------------------------------
# RNN-T
# ---------------------------------------------------------------------------

def rnnt_greedy(encoder_h, scorer: StepScorer, cfg: DecodeConfig) -> Hypothesis:
    n_frames = len(encoder_h)
    blank = scorer.blank_id
    state = scorer.start()
    tokens: List[int] = []
    logp = 0.0
    truncated = False
    for _ in range(n_frames):
        for _ in range(cfg.max_symbols_per_step):
            dist = scorer.distribution(state)
            best = int(np.argmax(dist))
            if best == blank:
                break
            if len(tokens) >= cfg.max_output_len:
                truncated = True
                break
            tokens.append(best)
            logp += float(dist[best])
            state, _ = scorer.step(state, best)
        logp += float(scorer.distribution(state)[blank])
        state, _ = scorer.step(state, blank)
    return Hypothesis(tokens=tuple(tokens), log_p_model=logp, kind="rnnt", state=state,
                      alive=False, truncated=truncated)


def rnnt_beam(encoder_h, scorer: StepScorer, cfg: DecodeConfig) -> List[Hypothesis]:
    """Time-synchronous beam search over the transducer lattice.

    Within a frame each prefix may emit up to ``max_symbols_per_step``
    symbols before the blank that moves it to the next frame. Prefixes that
    reach the next frame by different routes are merged by log-sum.
    """
    n_frames = len(encoder_h)
    blank = scorer.blank_id
    beam: Dict[Tuple[int, ...], Tuple[float, Any]] = {(): (0.0, scorer.start())}
    truncated: set = set()

    for _ in range(n_frames):
        arrived: Dict[Tuple[int, ...], List[Any]] = {}
        frontier = beam
        for round_index in range(cfg.max_symbols_per_step + 1):
            expanded: Dict[Tuple[int, ...], Tuple[float, Any, int]] = {}
            for prefix, (logp, state) in frontier.items():
                dist = scorer.distribution(state)
                through_blank = logp + float(dist[blank])
                if prefix in arrived:
                    arrived[prefix][0] = np.logaddexp(arrived[prefix][0], through_blank)
                else:
                    arrived[prefix] = [through_blank, state]
                if round_index == cfg.max_symbols_per_step:
                    continue
                if len(prefix) >= cfg.max_output_len:
                    truncated.add(prefix)
                    continue
                for k in range(blank):
                    expanded[prefix + (k,)] = (logp + float(dist[k]), state, k)
            if not expanded:
                break
            scores = {p: entry[0] for p, entry in expanded.items()}
            frontier = {}
            for p in _ranked_keys(scores, cfg.beam_width):
                logp, parent_state, k = expanded[p]
                frontier[p] = (logp, scorer.step(parent_state, k)[0])

        scores = {p: float(entry[0]) for p, entry in arrived.items()}
        beam = {}
        for p in _ranked_keys(scores, cfg.beam_width):
            logp, state = arrived[p]
            beam[p] = (float(logp), scorer.step(state, blank)[0])

    hyps = [
        Hypothesis(tokens=p, log_p_model=logp, kind="rnnt", state=state, alive=False,
                   truncated=p in truncated)
        for p, (logp, state) in beam.items()
    ]
    return rank(hyps, cfg)


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

def _coverage_from_mass(mass: np.ndarray) -> float:
    clipped = np.maximum(np.minimum(mass, 1.0), AppConfig.LOG_FLOOR)
    return float(np.log(clipped).sum())


def coverage_score(attn_rows) -> float:
    """Saturating coverage: sum over encoder steps of log(min(attended mass, 1))."""
    rows = np.atleast_2d(np.asarray(attn_rows, dtype=np.float64))
    return _coverage_from_mass(rows.sum(axis=0))


def attention_greedy(scorer: StepScorer, cfg: DecodeConfig) -> Hypothesis:
    """Argmax decoding; flags ``unterminated`` when eos never wins."""
    eos, sos = scorer.eos_id, scorer.sos_id
    state = scorer.start()
    tokens: List[int] = []
    logp = 0.0
    mass = np.zeros(scorer.n_frames)
    for _ in range(cfg.max_output_len + 1):
        dist = scorer.distribution(state).copy()
        mass = mass + scorer.attention(state)
        dist[sos] = NEG_INF
        best = int(np.argmax(dist))
        if best == eos:
            return Hypothesis(tokens=tuple(tokens), log_p_model=logp + float(dist[eos]), kind="attention", state=state,
                              alive=False, coverage=_coverage_from_mass(mass), attn_mass=mass)
        if len(tokens) >= cfg.max_output_len:
            break
        logp += float(dist[best])
        tokens.append(best)
        state, _ = scorer.step(state, best)
    return Hypothesis(tokens=tuple(tokens), log_p_model=logp, kind="attention", state=state,
                      coverage=_coverage_from_mass(mass), attn_mass=mass, unterminated=True)


def attention_beam(scorer: StepScorer, cfg: DecodeConfig) -> List[Hypothesis]:
    """Output-synchronous beam search with a pool of finished hypotheses.

    Ending with eos competes for the ``beam_width`` slots like any symbol
    extension; extensions past ``max_output_len`` still compete but are
    dropped. When nothing finishes, the longest alive hypotheses come back
    flagged ``unterminated``. The per-step attention rows come from the
    scorer states and accumulate into each hypothesis' coverage. For
    objectives that can only decrease with length (gamma == 0 and
    beta_cov == 0) the search also stops once the best finished hypothesis
    beats every alive one.
    """
    eos = scorer.eos_id
    vocab = scorer.vocab_size
    monotone = cfg.gamma == 0 and cfg.beta_cov == 0
    alive = [Hypothesis(tokens=(), log_p_model=0.0, kind="attention", state=scorer.start(),
                        attn_mass=np.zeros(scorer.n_frames))]
    completed: List[Hypothesis] = []

    for _ in range(cfg.max_output_len + 1):
        candidates: List[Hypothesis] = []
        for hyp in alive:
            dist = scorer.distribution(hyp.state)
            mass = hyp.attn_mass + scorer.attention(hyp.state)
            coverage = _coverage_from_mass(mass)
            candidates.append(replace(hyp, log_p_model=hyp.log_p_model + float(dist[eos]), alive=False,
                                      coverage=coverage, attn_mass=mass))
            for k in range(vocab):
                candidates.append(Hypothesis(tokens=hyp.tokens + (k,), log_p_model=hyp.log_p_model + float(dist[k]),
                                             kind="attention", coverage=coverage, attn_mass=mass, state=hyp.state))

        survivors: List[Hypothesis] = []
        for child in rank(candidates, cfg)[:cfg.beam_width]:
            if not child.alive:
                completed.append(child)
            elif len(child.tokens) <= cfg.max_output_len:
                child.state, _ = scorer.step(child.state, child.tokens[-1])
                survivors.append(child)
        completed = rank(completed, cfg)[:cfg.beam_width]

        if not survivors:
            break
        alive = survivors
        if monotone and completed and completed[0].score(cfg) >= alive[0].score(cfg):
            break

    if completed:
        return completed
    return [replace(hyp, unterminated=True) for hyp in rank(alive, cfg)]


# ---------------------------------------------------------------------------
# Rescoring and oracle
# ---------------------------------------------------------------------------

def rescore_with_lm(beam: Sequence[Hypothesis], lm: NGramLM, lam: float, cfg: DecodeConfig,
                    alphabet: Alphabet) -> List[Hypothesis]:
    """Re-rank a finished beam by its score plus ``lam`` times the LM score."""
    if not beam:
        raise TransducerError("cannot rescore an empty beam")
    rescored = [
        replace(hyp, log_p_rescore=lm_score(lm, alphabet.decode(hyp.tokens)), rescore_weight=lam)
        for hyp in beam
    ]
    return sorted(rescored, key=lambda h: -h.final_score(cfg))


def exhaustive_search(score_fn: Callable[[Tuple[int, ...]], float], symbols: Sequence[int],
                      max_len: int) -> Tuple[Tuple[int, ...], float]:
    """Score every sequence of length <= max_len; ties go to shorter, then lexicographic."""
    symbols = sorted(int(s) for s in symbols)
    if (len(symbols) + 2) ** max_len > AppConfig.EXHAUSTIVE_MAX_CANDIDATES:
        raise GuardExceededError(
            f"exhaustive search over {len(symbols)} symbols up to length {max_len} exceeds "
            f"{AppConfig.EXHAUSTIVE_MAX_CANDIDATES} candidates"
        )
    best: Tuple[int, ...] = ()
    best_score = NEG_INF
    for length in range(max_len + 1):
        for seq in itertools.product(symbols, repeat=length):
            value = score_fn(seq)
            if value > best_score:
                best, best_score = tuple(seq), value
    return best, best_score
