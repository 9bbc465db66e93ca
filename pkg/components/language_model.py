"""Character n-gram language model with add-k smoothing and backoff.

Probabilities come from the longest context that was seen during training:

    P(sym | ctx) = (c(ctx, sym) + k) / (c(ctx) + k * |vocab|)

and an unseen context backs off to its suffix, ending at the unigram table.
Each table is normalized over the vocabulary by construction, so every
context yields a proper distribution. Sentences are padded on the left with
``<s>`` and scored with a final ``</s>``.
"""

import json
import math
import os
import sys
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.app_config import AppConfig
from utils.errors import FormatVersionError, TransducerError

Context = Tuple[str, ...]


@dataclass
class NGramLM:
    order: int
    k: float
    vocab: Tuple[str, ...]
    # ngram_counts[m][(ctx, sym)] for m = 1..order, len(ctx) == m - 1
    ngram_counts: Dict[int, Counter] = field(default_factory=dict)
    context_counts: Dict[int, Counter] = field(default_factory=dict)

    def __post_init__(self):
        self._vocab_set = set(self.vocab)
        if not self.context_counts:
            self._rebuild_context_counts()

    def _rebuild_context_counts(self) -> None:
        self.context_counts = {}
        for m, table in self.ngram_counts.items():
            totals: Counter = Counter()
            for (ctx, _sym), count in table.items():
                totals[ctx] += count
            self.context_counts[m] = totals

    # -- probabilities -----------------------------------------------------

    def logprob(self, sym: str, context: Sequence[str]) -> float:
        """log P(sym | context) using the longest seen suffix of ``context``."""
        ctx = tuple(context)[-(self.order - 1):] if self.order > 1 else ()
        size = len(self.vocab)
        while True:
            m = len(ctx) + 1
            total = self.context_counts.get(m, Counter()).get(ctx, 0)
            if total > 0 or not ctx:
                if sym not in self._vocab_set:
                    # unknown symbols get the zero-count unigram floor
                    unigram_total = self.context_counts.get(1, Counter()).get((), 0)
                    return math.log(self.k / (unigram_total + self.k * size))
                count = self.ngram_counts.get(m, Counter()).get((ctx, sym), 0)
                return math.log((count + self.k) / (total + self.k * size))
            ctx = ctx[1:]

    def start_state(self) -> Context:
        return (AppConfig.SENTENCE_START,) * max(self.order - 1, 0)

    def advance(self, state: Context, sym: str) -> Tuple[Context, float]:
        """Score ``sym`` after ``state`` and return the shifted context."""
        logp = self.logprob(sym, state)
        if self.order <= 1:
            return (), logp
        return (tuple(state) + (sym,))[-(self.order - 1):], logp

    def final_logprob(self, state: Context) -> float:
        return self.logprob(AppConfig.SENTENCE_END, state)

    def distribution(self, context: Sequence[str]) -> Dict[str, float]:
        return {sym: math.exp(self.logprob(sym, context)) for sym in self.vocab}


def _sentence_events(text: str, order: int) -> Iterable[Tuple[Context, str]]:
    history: List[str] = [AppConfig.SENTENCE_START] * max(order - 1, 0)
    for sym in list(text) + [AppConfig.SENTENCE_END]:
        for m in range(1, order + 1):
            ctx = tuple(history[len(history) - (m - 1):]) if m > 1 else ()
            yield ctx, sym
        history.append(sym)


def train_ngram(corpus: Sequence[str], n: int = AppConfig.DEFAULT_LM_ORDER, k: float = AppConfig.DEFAULT_LM_K,
                vocab: Optional[Sequence[str]] = None) -> NGramLM:
    """Count n-grams of every order up to ``n`` over the corpus lines."""
    lines = list(corpus)
    if not lines:
        raise TransducerError("cannot train a language model on an empty corpus")
    if not 1 <= n <= 6:
        raise TransducerError(f"n-gram order must be in [1, 6], got {n}")
    if k <= 0:
        raise TransducerError(f"smoothing constant must be positive, got {k}")

    observed = sorted({ch for line in lines for ch in line})
    symbols = list(dict.fromkeys(list(vocab or []) + observed))
    if AppConfig.SENTENCE_END not in symbols:
        symbols.append(AppConfig.SENTENCE_END)

    counts: Dict[int, Counter] = {m: Counter() for m in range(1, n + 1)}
    for line in lines:
        for ctx, sym in _sentence_events(line, n):
            counts[len(ctx) + 1][(ctx, sym)] += 1
    return NGramLM(order=n, k=float(k), vocab=tuple(symbols), ngram_counts=counts)


def lm_score(lm: NGramLM, text: str) -> float:
    """Natural-log probability of ``text`` followed by the sentence end."""
    state = lm.start_state()
    total = 0.0
    for sym in text:
        state, logp = lm.advance(state, sym)
        total += logp
    return total + lm.final_logprob(state)


def word_count(text: str, boundary: str = AppConfig.WORD_BOUNDARY, has_boundary: bool = True) -> int:
    """Words delimited by ``boundary``; plain symbol count for boundary-free alphabets."""
    if not has_boundary:
        return len(text)
    return len(text.split(boundary)) if text.strip(boundary) else 0


def save_lm(lm: NGramLM, path) -> Path:
    path = Path(path)
    lines = [
        "#ngram-lm",
        f"version\t{AppConfig.LM_FORMAT_VERSION}",
        f"n\t{lm.order}",
        f"k\t{lm.k!r}",
        f"vocab\t{json.dumps(list(lm.vocab), ensure_ascii=False)}",
    ]
    for m in sorted(lm.ngram_counts):
        for (ctx, sym), count in sorted(lm.ngram_counts[m].items()):
            lines.append(f"{json.dumps(list(ctx), ensure_ascii=False)}\t{json.dumps(sym, ensure_ascii=False)}\t{count}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
    return path


def load_lm(path) -> NGramLM:
    with open(Path(path), "r", encoding="utf-8") as handle:
        lines = handle.read().split("\n")
    if not lines or lines[0] != "#ngram-lm":
        raise FormatVersionError(f"{path} is not an n-gram model file")
    header: Dict[str, str] = {}
    for line in lines[1:5]:
        key, _, value = line.partition("\t")
        header[key] = value
    if header.get("version") != str(AppConfig.LM_FORMAT_VERSION):
        raise FormatVersionError(f"unsupported language model version {header.get('version')!r}")
    order = int(header["n"])
    counts: Dict[int, Counter] = {m: Counter() for m in range(1, order + 1)}
    for line in lines[5:]:
        if not line:
            continue
        ctx_json, sym_json, count = line.split("\t")
        ctx = tuple(json.loads(ctx_json))
        counts[len(ctx) + 1][(ctx, json.loads(sym_json))] = int(count)
    return NGramLM(order=order, k=float(header["k"]), vocab=tuple(json.loads(header["vocab"])), ngram_counts=counts)
