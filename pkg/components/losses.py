"""The three transduction objectives.

CTC and RNN-T marginalize over monotone alignments with forward-backward
recursions in log space; the attention objective is a teacher-forced sum of
per-step cross entropies. Every loss returns the exact gradient with respect
to its unnormalized logits. Brute-force enumeration and Viterbi extraction
live here too because they share the lattice conventions:

* blank is the last class (index V);
* the attention branch predicts V+2 classes: the V symbols, sos at index V
  (never a target) and eos at index V+1;
* RNN-T paths end with a mandatory blank from node (T'-1, U);
* the prediction network is not advanced by blanks.
"""

import itertools
import math
import sys
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.app_config import AppConfig
from utils.errors import (
    GuardExceededError,
    InvalidLabelError,
    NoAlignmentError,
    NonFiniteError,
    ShapeMismatchError,
)
from utils.numerics import log_softmax, softmax

NEG_INF = -math.inf


@dataclass(frozen=True)
class Alphabet:
    """Ordered output symbols. Blank (and the attention sos) sit at index V."""

    symbols: Tuple[str, ...]

    def __post_init__(self):
        if len(self.symbols) < 1:
            raise ValueError("alphabet needs at least one symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be unique")

    @classmethod
    def from_symbols(cls, symbols: Sequence[str]) -> "Alphabet":
        return cls(tuple(symbols))

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def blank_id(self) -> int:
        return len(self.symbols)

    @property
    def sos_id(self) -> int:
        return len(self.symbols)

    @property
    def eos_id(self) -> int:
        return len(self.symbols) + 1

    def encode(self, text: str) -> List[int]:
        index = {sym: i for i, sym in enumerate(self.symbols)}
        try:
            return [index[ch] for ch in text]
        except KeyError as exc:
            raise InvalidLabelError(f"symbol {exc.args[0]!r} is not in the alphabet") from None

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.symbols[i] for i in ids if 0 <= i < len(self.symbols))


@dataclass
class JointLogits:
    """T' x (U+1) x (V+1) RNN-T scores built as h_proj[t] + g_proj[u]."""

    values: np.ndarray
    h_proj: Optional[np.ndarray] = None
    g_proj: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.values.shape


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray


@dataclass
class AlignmentPath:
    """Best path through a lattice, or validated attention weights.

    ctc: ``frames`` holds one label-or-blank per encoder step and ``states``
    the expanded-label index visited at each step.
    rnnt: ``steps`` holds (t, u, emitted) transitions; emitted == blank for
    horizontal moves.
    attention: ``weights`` is the U x T' matrix of alpha rows.
    """

    kind: str
    log_prob: float = NEG_INF
    frames: List[int] = field(default_factory=list)
    states: List[int] = field(default_factory=list)
    steps: List[Tuple[int, int, int]] = field(default_factory=list)
    weights: Optional[np.ndarray] = None

    def is_monotone(self) -> bool:
        if self.kind == "ctc":
            return all(0 <= b - a <= 2 for a, b in zip(self.states, self.states[1:]))
        if self.kind == "rnnt":
            for (t0, u0, _), (t1, u1, _) in zip(self.steps, self.steps[1:]):
                if (t1 - t0, u1 - u0) not in ((1, 0), (0, 1)):
                    return False
            return True
        return True


def _as_logit_matrix(logits, name: str = "logits") -> np.ndarray:
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ShapeMismatchError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contain non-finite entries")
    return arr


def _check_labels(labels: Sequence[int], vocab_size: int) -> List[int]:
    ids = [int(i) for i in labels]
    for i in ids:
        if not 0 <= i < vocab_size:
            raise InvalidLabelError(f"label id {i} outside [0, {vocab_size})")
    return ids


def ctc_collapse(path: Sequence[int], blank: int) -> List[int]:
    """Mapping B: merge repeats, then drop blanks."""
    out: List[int] = []
    prev = None
    for label in path:
        if label != prev and label != blank:
            out.append(int(label))
        prev = label
    return out


def ctc_min_frames(labels: Sequence[int]) -> int:
    """Shortest frame count that can carry ``labels`` under mapping B."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


# ---------------------------------------------------------------------------
# CTC
# ---------------------------------------------------------------------------

def _ctc_expand(labels: Sequence[int], blank: int) -> Tuple[np.ndarray, np.ndarray]:
    ext = [blank]
    for label in labels:
        ext.extend([label, blank])
    ext_arr = np.asarray(ext, dtype=np.int64)
    skip = np.zeros(len(ext), dtype=bool)
    for s in range(2, len(ext)):
        skip[s] = ext[s] != blank and ext[s] != ext[s - 2]
    return ext_arr, skip


def _ctc_tables(logits: np.ndarray, labels: Sequence[int]):
    n_frames, n_classes = logits.shape
    blank = n_classes - 1
    ids = _check_labels(labels, blank)
    required = ctc_min_frames(ids)
    if required > n_frames:
        raise NoAlignmentError(required, n_frames)

    log_probs = log_softmax(logits, axis=1)
    ext, skip = _ctc_expand(ids, blank)
    n_states = ext.size
    emit = log_probs[:, ext]

    alpha = np.full((n_frames, n_states), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if n_states > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        stay_or_step = prev.copy()
        stay_or_step[1:] = np.logaddexp(prev[1:], prev[:-1])
        jump = np.full(n_states, NEG_INF)
        jump[2:] = np.where(skip[2:], prev[:-2], NEG_INF)
        alpha[t] = np.logaddexp(stay_or_step, jump) + emit[t]

    # beta[t, s] excludes the emission at t
    beta = np.full((n_frames, n_states), NEG_INF)
    beta[-1, -1] = 0.0
    if n_states > 1:
        beta[-1, -2] = 0.0
    for t in range(n_frames - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(nxt[:-1], nxt[1:])
        jump = np.full(n_states, NEG_INF)
        jump[:-2] = np.where(skip[2:], nxt[2:], NEG_INF)
        beta[t] = np.logaddexp(acc, jump)

    if n_states > 1:
        log_z = float(np.logaddexp(alpha[-1, -1], alpha[-1, -2]))
    else:
        log_z = float(alpha[-1, -1])
    return log_probs, ext, alpha, beta, log_z


def ctc_loss(logits, labels: Sequence[int]) -> LossResult:
    """Negative log-likelihood of ``labels`` summed over all CTC alignments."""
    logits = _as_logit_matrix(logits)
    log_probs, ext, alpha, beta, log_z = _ctc_tables(logits, labels)
    gamma = np.exp(alpha + beta - log_z)
    occupancy = np.zeros_like(logits)
    for s, label in enumerate(ext):
        occupancy[:, label] += gamma[:, s]
    grad = np.exp(log_probs) - occupancy
    return LossResult(loss=-log_z, grad=grad)


def ctc_posterior(logits, labels: Sequence[int]) -> np.ndarray:
    """T' x (2U+1) occupancy of each expanded-label state."""
    logits = _as_logit_matrix(logits)
    _, _, alpha, beta, log_z = _ctc_tables(logits, labels)
    return np.exp(alpha + beta - log_z)


def _ctc_viterbi(logits: np.ndarray, labels: Sequence[int]) -> AlignmentPath:
    n_frames, n_classes = logits.shape
    blank = n_classes - 1
    ids = _check_labels(labels, blank)
    required = ctc_min_frames(ids)
    if required > n_frames:
        raise NoAlignmentError(required, n_frames)
    log_probs = log_softmax(logits, axis=1)
    ext, skip = _ctc_expand(ids, blank)
    n_states = ext.size
    emit = log_probs[:, ext]

    score = np.full((n_frames, n_states), NEG_INF)
    back = np.zeros((n_frames, n_states), dtype=np.int64)
    score[0, 0] = emit[0, 0]
    if n_states > 1:
        score[0, 1] = emit[0, 1]
    for t in range(1, n_frames):
        for s in range(n_states):
            # candidates ordered by preference: most progress first
            best, arg = NEG_INF, s
            candidates = []
            if s >= 2 and skip[s]:
                candidates.append(s - 2)
            if s >= 1:
                candidates.append(s - 1)
            candidates.append(s)
            for cand in candidates:
                if score[t - 1, cand] > best:
                    best, arg = score[t - 1, cand], cand
            score[t, s] = best + emit[t, s]
            back[t, s] = arg

    end = n_states - 1
    if n_states > 1 and score[-1, n_states - 2] > score[-1, n_states - 1]:
        end = n_states - 2
    states = [end]
    for t in range(n_frames - 1, 0, -1):
        states.append(int(back[t, states[-1]]))
    states.reverse()
    frames = [int(ext[s]) for s in states]
    return AlignmentPath(kind="ctc", log_prob=float(score[-1, end]), frames=frames, states=states)


# ---------------------------------------------------------------------------
# RNN-T
# ---------------------------------------------------------------------------

def joint_combine(h_proj, g_proj) -> JointLogits:
    """Materialize e[t, u] = h_proj[t] + g_proj[u]."""
    h = np.asarray(h_proj, dtype=np.float64)
    g = np.asarray(g_proj, dtype=np.float64)
    if h.ndim != 2 or g.ndim != 2:
        raise ShapeMismatchError("joint inputs must be 2-D matrices")
    if h.shape[1] != g.shape[1]:
        raise ShapeMismatchError(
            f"encoder projection has {h.shape[1]} classes but prediction projection has {g.shape[1]}"
        )
    return JointLogits(values=h[:, None, :] + g[None, :, :], h_proj=h, g_proj=g)


def _joint_values(joint) -> np.ndarray:
    values = joint.values if isinstance(joint, JointLogits) else np.asarray(joint, dtype=np.float64)
    if values.ndim != 3 or values.shape[0] < 1:
        raise ShapeMismatchError(f"joint logits must be T' x (U+1) x (V+1), got shape {values.shape}")
    if not np.isfinite(values).all():
        raise NonFiniteError("joint logits contain non-finite entries")
    return values


def _rnnt_tables(values: np.ndarray, labels: Sequence[int]):
    n_frames, n_rows, n_classes = values.shape
    blank = n_classes - 1
    ids = _check_labels(labels, blank)
    if n_rows != len(ids) + 1:
        raise ShapeMismatchError(f"joint has {n_rows} prediction rows but labels need {len(ids) + 1}")

    log_probs = log_softmax(values, axis=2)
    blank_lp = log_probs[:, :, blank]
    emit_lp = np.full((n_frames, n_rows), NEG_INF)
    for u, label in enumerate(ids):
        emit_lp[:, u] = log_probs[:, u, label]

    alpha = np.full((n_frames, n_rows), NEG_INF)
    for t in range(n_frames):
        for u in range(n_rows):
            if t == 0 and u == 0:
                alpha[t, u] = 0.0
                continue
            from_left = alpha[t - 1, u] + blank_lp[t - 1, u] if t > 0 else NEG_INF
            from_below = alpha[t, u - 1] + emit_lp[t, u - 1] if u > 0 else NEG_INF
            alpha[t, u] = np.logaddexp(from_left, from_below)

    beta = np.full((n_frames, n_rows), NEG_INF)
    for t in range(n_frames - 1, -1, -1):
        for u in range(n_rows - 1, -1, -1):
            if t == n_frames - 1 and u == n_rows - 1:
                beta[t, u] = blank_lp[t, u]
                continue
            via_blank = beta[t + 1, u] + blank_lp[t, u] if t < n_frames - 1 else NEG_INF
            via_emit = beta[t, u + 1] + emit_lp[t, u] if u < n_rows - 1 else NEG_INF
            beta[t, u] = np.logaddexp(via_blank, via_emit)

    log_z = float(beta[0, 0])
    return ids, log_probs, blank_lp, emit_lp, alpha, beta, log_z


def rnnt_loss(joint, labels: Sequence[int]) -> LossResult:
    """Negative log-likelihood over all monotone lattice paths ending in blank."""
    values = _joint_values(joint)
    ids, log_probs, blank_lp, emit_lp, alpha, beta, log_z = _rnnt_tables(values, labels)
    n_frames, n_rows, n_classes = values.shape
    blank = n_classes - 1

    # expected use of each transition, i.e. d log_z / d log_prob
    blank_occ = np.zeros((n_frames, n_rows))
    blank_occ[:-1, :] = np.exp(alpha[:-1, :] + blank_lp[:-1, :] + beta[1:, :] - log_z)
    blank_occ[-1, -1] = np.exp(alpha[-1, -1] + blank_lp[-1, -1] - log_z)
    emit_occ = np.zeros((n_frames, n_rows))
    if n_rows > 1:
        emit_occ[:, :-1] = np.exp(alpha[:, :-1] + emit_lp[:, :-1] + beta[:, 1:] - log_z)

    occupancy = np.zeros_like(values)
    occupancy[:, :, blank] = blank_occ
    for u, label in enumerate(ids):
        occupancy[:, u, label] += emit_occ[:, u]
    node_mass = occupancy.sum(axis=2, keepdims=True)
    grad = np.exp(log_probs) * node_mass - occupancy
    return LossResult(loss=-log_z, grad=grad)


def rnnt_posterior(joint, labels: Sequence[int]) -> np.ndarray:
    """T' x (U+1) probability that a path visits each lattice node."""
    values = _joint_values(joint)
    _, _, _, _, alpha, beta, log_z = _rnnt_tables(values, labels)
    return np.exp(alpha + beta - log_z)


def joint_grad_parts(joint: JointLogits, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Reduce a joint-shaped gradient onto its encoder and prediction sides."""
    return grad.sum(axis=1), grad.sum(axis=0)


def _rnnt_viterbi(values: np.ndarray, labels: Sequence[int]) -> AlignmentPath:
    ids, _, blank_lp, emit_lp, _, _, _ = _rnnt_tables(values, labels)
    n_frames, n_rows, n_classes = values.shape
    blank = n_classes - 1

    score = np.full((n_frames, n_rows), NEG_INF)
    came_by_emit = np.zeros((n_frames, n_rows), dtype=bool)
    for t in range(n_frames):
        for u in range(n_rows):
            if t == 0 and u == 0:
                score[t, u] = 0.0
                continue
            from_left = score[t - 1, u] + blank_lp[t - 1, u] if t > 0 else NEG_INF
            from_below = score[t, u - 1] + emit_lp[t, u - 1] if u > 0 else NEG_INF
            # on ties keep the path that took its vertical (emit) move first
            if from_below > from_left:
                score[t, u], came_by_emit[t, u] = from_below, True
            else:
                score[t, u] = from_left
    final = float(score[-1, -1] + blank_lp[-1, -1])

    steps: List[Tuple[int, int, int]] = [(n_frames - 1, n_rows - 1, blank)]
    t, u = n_frames - 1, n_rows - 1
    while (t, u) != (0, 0):
        if came_by_emit[t, u]:
            u -= 1
            steps.append((t, u, ids[u]))
        else:
            t -= 1
            steps.append((t, u, blank))
    steps.reverse()
    return AlignmentPath(kind="rnnt", log_prob=final, steps=steps)


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

def attention_nll(step_logits, labels: Sequence[int]) -> LossResult:
    """Teacher-forced NLL of ``labels`` followed by one eos target."""
    logits = _as_logit_matrix(step_logits, "step logits")
    n_steps, n_classes = logits.shape
    vocab = n_classes - 2
    if vocab < 1:
        raise ShapeMismatchError("attention logits need V+2 columns")
    ids = [int(i) for i in labels]
    for i in ids:
        if i >= vocab:
            raise InvalidLabelError(f"label id {i} is a reserved sos/eos index")
        if i < 0:
            raise InvalidLabelError(f"label id {i} is negative")
    if n_steps != len(ids) + 1:
        raise ShapeMismatchError(f"{n_steps} logit rows for {len(ids)} labels (expected U+1)")

    targets = np.asarray(ids + [vocab + 1], dtype=np.int64)
    log_probs = log_softmax(logits, axis=1)
    rows = np.arange(n_steps)
    loss = -float(log_probs[rows, targets].sum())
    grad = softmax(logits, axis=1)
    grad[rows, targets] -= 1.0
    return LossResult(loss=loss, grad=grad)


def validate_attention(weights) -> np.ndarray:
    arr = np.asarray(weights, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError("attention weights must be a U x T' matrix")
    if (arr < 0).any():
        raise ValueError("attention weights must be non-negative")
    sums = arr.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=AppConfig.ATTENTION_ROW_TOLERANCE, rtol=0.0):
        raise ValueError("attention rows must each sum to 1")
    return arr


# ---------------------------------------------------------------------------
# Oracles and alignments
# ---------------------------------------------------------------------------

def _check_guard(n_frames: int, n_labels: int, vocab: int) -> None:
    if (n_frames > AppConfig.BRUTE_FORCE_MAX_FRAMES or n_labels > AppConfig.BRUTE_FORCE_MAX_LABELS
            or vocab > AppConfig.BRUTE_FORCE_MAX_SYMBOLS):
        raise GuardExceededError(
            f"brute force limited to T'<={AppConfig.BRUTE_FORCE_MAX_FRAMES}, "
            f"U<={AppConfig.BRUTE_FORCE_MAX_LABELS}, V<={AppConfig.BRUTE_FORCE_MAX_SYMBOLS}; "
            f"got T'={n_frames}, U={n_labels}, V={vocab}"
        )


def brute_force_loss(kind: str, x, labels: Sequence[int]) -> float:
    """Enumerate every raw path and return -log of the summed probability."""
    ids = [int(i) for i in labels]
    if kind == "ctc":
        logits = _as_logit_matrix(x)
        n_frames, n_classes = logits.shape
        blank = n_classes - 1
        _check_guard(n_frames, len(ids), blank)
        log_probs = log_softmax(logits, axis=1)
        frames = np.arange(n_frames)
        total = NEG_INF
        for path in itertools.product(range(n_classes), repeat=n_frames):
            if ctc_collapse(path, blank) == ids:
                total = np.logaddexp(total, log_probs[frames, list(path)].sum())
        if total == NEG_INF:
            raise NoAlignmentError(ctc_min_frames(ids), n_frames)
        return -float(total)

    if kind == "rnnt":
        values = _joint_values(x)
        n_frames, n_rows, n_classes = values.shape
        blank = n_classes - 1
        _check_guard(n_frames, len(ids), blank)
        if n_rows != len(ids) + 1:
            raise ShapeMismatchError(f"joint has {n_rows} prediction rows but labels need {len(ids) + 1}")
        log_probs = log_softmax(values, axis=2)
        n_moves = n_frames + len(ids) - 1  # moves before the final blank
        total = NEG_INF
        for emit_positions in itertools.combinations(range(n_moves), len(ids)):
            emits = set(emit_positions)
            t = u = 0
            logp = 0.0
            for move in range(n_moves):
                if move in emits:
                    logp += log_probs[t, u, ids[u]]
                    u += 1
                else:
                    logp += log_probs[t, u, blank]
                    t += 1
            logp += log_probs[t, u, blank]
            total = np.logaddexp(total, logp)
        return -float(total)

    raise ValueError(f"brute force is defined for ctc and rnnt, not {kind!r}")


def best_alignment(kind: str, x, labels: Sequence[int]) -> AlignmentPath:
    """Viterbi path for ctc/rnnt; validated pass-through of alpha for attention."""
    if kind == "ctc":
        return _ctc_viterbi(_as_logit_matrix(x), labels)
    if kind == "rnnt":
        return _rnnt_viterbi(_joint_values(x), labels)
    if kind == "attention":
        weights = validate_attention(x)
        return AlignmentPath(kind="attention", log_prob=0.0, weights=weights)
    raise ValueError(f"unknown alignment kind {kind!r}")


def alignment_posterior(kind: str, x, labels: Sequence[int]) -> np.ndarray:
    """Per-node posterior occupancy used for heatmaps."""
    if kind == "ctc":
        return ctc_posterior(x, labels)
    if kind == "rnnt":
        return rnnt_posterior(x, labels)
    raise ValueError(f"posteriors are defined for ctc and rnnt, not {kind!r}")
