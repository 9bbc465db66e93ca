"""Synthetic speech-like corpora.

Each symbol owns a fixed random prototype vector and is rendered as d copies
(d drawn from [dmin, dmax]) plus Gaussian noise. Silence frames are the zero
vector plus noise. Text comes from order-2 Markov chains: the test side uses
its own chain, the train side mixes its chain with the test one by
``divergence`` (0 = same distribution, 1 = unrelated). The LM corpus is
sampled from the test-side chain.
"""

import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.app_config import AppConfig
from config.settings import SyntheticSpec
from utils.data_processing import DataProcessor, Utterance
from utils.numerics import SeededRng
from utils.report_generator import ReportGenerator

logger = logging.getLogger(__name__)


@dataclass
class TextChain:
    """Order-2 chain over symbol ids; outcome V ends the sentence, context V is the start pad."""

    table: np.ndarray  # (V+1) x (V+1) x (V+1)

    @classmethod
    def from_seed(cls, n_symbols: int, seed: int, concentration: float) -> "TextChain":
        rng = SeededRng(seed)
        table = np.zeros((n_symbols + 1, n_symbols + 1, n_symbols + 1))
        for a in range(n_symbols + 1):
            for b in range(n_symbols + 1):
                table[a, b] = rng.dirichlet([concentration] * (n_symbols + 1))
        return cls(table)

    def mixed_with(self, other: "TextChain", weight: float) -> "TextChain":
        return TextChain((1.0 - weight) * other.table + weight * self.table)

    def sample(self, rng: SeededRng, min_len: int, max_len: int, boundary: Optional[int] = None) -> List[int]:
        n_symbols = self.table.shape[0] - 1
        end = n_symbols
        a = b = n_symbols
        out: List[int] = []
        while True:
            p = self.table[a, b].copy()
            if len(out) < min_len:
                p[end] = 0.0
            if boundary is not None and (not out or out[-1] == boundary):
                # no leading, doubled or trailing word boundaries
                p[boundary] = 0.0
                p[end] = 0.0
            if boundary is not None and len(out) >= max_len - 1:
                p[boundary] = 0.0
            if len(out) >= max_len:
                p[:] = 0.0
                p[end] = 1.0
            if p.sum() <= 0.0:
                p[:end] = 1.0
                if boundary is not None and end > 1:
                    p[boundary] = 0.0
            sym = rng.choice(n_symbols + 1, p / p.sum())
            if sym == end:
                return out
            out.append(sym)
            a, b = b, sym


def make_prototypes(spec: SyntheticSpec) -> np.ndarray:
    return SeededRng(spec.seed).child(0).normal(0.0, 1.0, size=(len(spec.alphabet), spec.feature_dim))


def render_frames(ids: Sequence[int], prototypes: np.ndarray, spec: SyntheticSpec, rng: SeededRng) -> np.ndarray:
    """Stack prototype copies (and optional silences) for a symbol sequence, then add noise."""
    rows: List[np.ndarray] = []
    silence = np.zeros(prototypes.shape[1])
    for sym in ids:
        if spec.silence_prob > 0 and rng.random() < spec.silence_prob:
            rows += [silence] * int(rng.integers(spec.dmin, spec.dmax + 1))
        rows += [prototypes[sym]] * int(rng.integers(spec.dmin, spec.dmax + 1))
    if not rows:
        rows = [silence] * int(rng.integers(spec.dmin, spec.dmax + 1))
    frames = np.vstack(rows)
    if spec.noise_sigma > 0:
        frames = frames + rng.normal(0.0, spec.noise_sigma, size=frames.shape)
    return frames


def _noise_utterance(utt_id: str, spec: SyntheticSpec, rng: SeededRng) -> Utterance:
    n_frames = int(rng.integers(spec.dmin * spec.min_symbols, spec.dmax * spec.max_symbols + 1))
    frames = rng.normal(0.0, 1.0, size=(n_frames, spec.feature_dim))
    return Utterance(utt_id, frames, "", tags={"noise": True})


def synthesize(spec: SyntheticSpec) -> Dict[str, List[Utterance]]:
    """Build the train, dev and test splits in memory."""
    alphabet = list(spec.alphabet)
    boundary = alphabet.index(AppConfig.WORD_BOUNDARY) if AppConfig.WORD_BOUNDARY in alphabet else None
    prototypes = make_prototypes(spec)
    test_chain = TextChain.from_seed(len(alphabet), spec.text_seed_test, spec.concentration)
    train_chain = TextChain.from_seed(len(alphabet), spec.text_seed_train, spec.concentration).mixed_with(
        test_chain, spec.divergence)
    # dev is held out from the target text, like test
    chains = {"train": train_chain, "dev": test_chain, "test": test_chain}
    counts = {"train": spec.n_train, "dev": spec.n_dev, "test": spec.n_test}

    root = SeededRng(spec.seed)
    splits: Dict[str, List[Utterance]] = {}
    for index, split in enumerate(AppConfig.DATASET_SPLITS, start=1):
        rng = root.child(index)
        utterances = []
        for i in range(counts[split]):
            utt_id = f"{split}-{i:05d}"
            if rng.random() < spec.noise_fraction:
                utterances.append(_noise_utterance(utt_id, spec, rng))
                continue
            ids = chains[split].sample(rng, spec.min_symbols, spec.max_symbols, boundary)
            frames = render_frames(ids, prototypes, spec, rng)
            utterances.append(Utterance(utt_id, frames, "".join(alphabet[k] for k in ids)))
        splits[split] = utterances
    return splits


def sample_lm_corpus(spec: SyntheticSpec) -> List[str]:
    alphabet = list(spec.alphabet)
    boundary = alphabet.index(AppConfig.WORD_BOUNDARY) if AppConfig.WORD_BOUNDARY in alphabet else None
    chain = TextChain.from_seed(len(alphabet), spec.text_seed_test, spec.concentration)
    rng = SeededRng(spec.seed).child(len(AppConfig.DATASET_SPLITS) + 1)
    return ["".join(alphabet[k] for k in chain.sample(rng, spec.min_symbols, spec.max_symbols, boundary))
            for _ in range(spec.lm_corpus_lines)]


def generate_dataset(spec: SyntheticSpec, out_dir) -> Dict[str, Path]:
    """Write every split, the LM corpus, the prototypes and the spec echo under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: Dict[str, Path] = {}
    profiles = {}
    for split, utterances in synthesize(spec).items():
        paths[split] = DataProcessor.write_utterances(DataProcessor.split_path(out_dir, split), utterances)
        profiles[split] = DataProcessor.get_data_profile(utterances)
        logger.info("wrote %d %s utterances to %s (%.1f frames per symbol, %d empty)", len(utterances), split,
                    paths[split], profiles[split].get("frames_per_symbol", 0.0),
                    profiles[split].get("empty_references", 0))
    paths["profile"] = ReportGenerator.write_json(profiles, out_dir / "data_profile.json")

    corpus_path = out_dir / AppConfig.LM_CORPUS_FILE
    with open(corpus_path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(sample_lm_corpus(spec)) + "\n")
    paths["lm_corpus"] = corpus_path

    prototypes = pd.DataFrame(make_prototypes(spec), columns=[f"f{j}" for j in range(spec.feature_dim)])
    prototypes.insert(0, "symbol", [json.dumps(s) for s in spec.alphabet])
    paths["prototypes"] = out_dir / AppConfig.PROTOTYPES_FILE
    prototypes.to_csv(paths["prototypes"], index=False, lineterminator="\n")

    paths["spec"] = out_dir / "synthetic_spec.json"
    with open(paths["spec"], "w", encoding="utf-8", newline="\n") as handle:
        json.dump(spec.model_dump(mode="json"), handle, indent=2, sort_keys=True)
        handle.write("\n")
    return paths


def load_prototypes(data_dir) -> Dict[str, np.ndarray]:
    table = pd.read_csv(Path(data_dir) / AppConfig.PROTOTYPES_FILE)
    symbols = [json.loads(s) for s in table["symbol"]]
    return dict(zip(symbols, table.drop(columns=["symbol"]).to_numpy(dtype=np.float64)))


def nearest_prototype_decode(frames: np.ndarray, prototypes: np.ndarray, alphabet: Sequence[str],
                             collapse: bool = False) -> str:
    """Label each frame with its nearest prototype (or silence) and read off the text.

    With one frame per symbol and ``collapse=False`` this recovers the
    reference exactly on noiseless data.
    """
    candidates = np.vstack([prototypes, np.zeros((1, prototypes.shape[1]))])
    distances = ((frames[:, None, :] - candidates[None, :, :]) ** 2).sum(axis=2)
    labels = distances.argmin(axis=1)
    silence = len(alphabet)
    out: List[str] = []
    previous = None
    for label in labels:
        if label != silence and not (collapse and label == previous):
            out.append(alphabet[label])
        previous = label
    return "".join(out)
