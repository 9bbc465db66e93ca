"""Word and character error rates with a substitution/insertion/deletion breakdown."""

import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.app_config import AppConfig
from utils.errors import ShapeMismatchError


@dataclass
class EditCounts:
    hits: int = 0
    subs: int = 0
    ins: int = 0
    dels: int = 0

    @property
    def errors(self) -> int:
        return self.subs + self.ins + self.dels

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(self.hits + other.hits, self.subs + other.subs,
                          self.ins + other.ins, self.dels + other.dels)


def edit_distance_table(ref: Sequence[str], hyp: Sequence[str]) -> np.ndarray:
    n, m = len(ref), len(hyp)
    table = np.zeros((n + 1, m + 1), dtype=np.int64)
    table[:, 0] = np.arange(n + 1)
    table[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            table[i, j] = min(table[i - 1, j - 1] + cost, table[i - 1, j] + 1, table[i, j - 1] + 1)
    return table


def align_counts(ref: Sequence[str], hyp: Sequence[str]) -> EditCounts:
    """Backtrace one minimum-cost alignment; ties prefer substitution, then deletion, then insertion."""
    table = edit_distance_table(ref, hyp)
    counts = EditCounts()
    i, j = len(ref), len(hyp)
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            if table[i, j] == table[i - 1, j - 1] + cost:
                if cost:
                    counts.subs += 1
                else:
                    counts.hits += 1
                i, j = i - 1, j - 1
                continue
        if i > 0 and table[i, j] == table[i - 1, j] + 1:
            counts.dels += 1
            i -= 1
            continue
        counts.ins += 1
        j -= 1
    return counts


def _words(text: str) -> List[str]:
    return [word for word in text.split(AppConfig.WORD_BOUNDARY) if word]


@dataclass
class MetricsReport:
    """Error rates in percent of reference length.

    ``wer`` is defined as ``subs + ins + dels`` so the breakdown adds up exactly.
    """

    wer: float
    cer: float
    subs: float
    ins: float
    dels: float
    ref_words: int
    ref_chars: int
    word_counts: EditCounts
    char_counts: EditCounts
    utterances: int
    config: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    rng_algorithm: str = AppConfig.RNG_ALGORITHM

    def to_row(self) -> Dict[str, Any]:
        return {
            "wer": self.wer,
            "cer": self.cer,
            "subs": self.subs,
            "ins": self.ins,
            "dels": self.dels,
            "ref_words": self.ref_words,
            "ref_chars": self.ref_chars,
            "utterances": self.utterances,
            "seed": self.seed,
            "rng_algorithm": self.rng_algorithm,
        }

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _percent(count: int, total: int) -> float:
    return 100.0 * count / max(total, 1)


def wer_breakdown(refs: Sequence[str], hyps: Sequence[str], config: Optional[Dict[str, Any]] = None,
                  seed: Optional[int] = None) -> MetricsReport:
    """Aggregate word and character errors over utterance pairs."""
    if len(refs) != len(hyps):
        raise ShapeMismatchError(f"{len(refs)} references but {len(hyps)} hypotheses")
    words = EditCounts()
    chars = EditCounts()
    ref_words = ref_chars = 0
    for ref, hyp in zip(refs, hyps):
        ref_tokens = _words(ref)
        words = words + align_counts(ref_tokens, _words(hyp))
        chars = chars + align_counts(list(ref), list(hyp))
        ref_words += len(ref_tokens)
        ref_chars += len(ref)
    subs = _percent(words.subs, ref_words)
    ins = _percent(words.ins, ref_words)
    dels = _percent(words.dels, ref_words)
    return MetricsReport(
        wer=subs + ins + dels,
        cer=_percent(chars.errors, ref_chars),
        subs=subs,
        ins=ins,
        dels=dels,
        ref_words=ref_words,
        ref_chars=ref_chars,
        word_counts=words,
        char_counts=chars,
        utterances=len(refs),
        config=dict(config or {}),
        seed=seed,
    )
