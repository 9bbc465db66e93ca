#!/usr/bin/env python3
"""
Tests for the synthetic corpus generator and utterance files
"""

import json
import os
import sys

import numpy as np
import pytest

# Add the project root to the path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from components.data_generator import (
    TextChain,
    generate_dataset,
    load_prototypes,
    make_prototypes,
    nearest_prototype_decode,
    synthesize,
)
from components.scoring import wer_breakdown
from config.settings import SyntheticSpec
from utils.data_processing import DataProcessor, Utterance
from utils.errors import FormatVersionError
from utils.numerics import SeededRng


def small_spec(**overrides):
    values = dict(alphabet=list("abc "), feature_dim=6, dmin=2, dmax=3, noise_sigma=0.1,
                  silence_prob=0.0, noise_fraction=0.0, min_symbols=2, max_symbols=5,
                  n_train=6, n_dev=2, n_test=3, lm_corpus_lines=20, seed=7)
    values.update(overrides)
    return SyntheticSpec(**values)


def test_noiseless_single_frames_decode_exactly():
    spec = small_spec(noise_sigma=0.0, dmin=1, dmax=1)
    prototypes = make_prototypes(spec)
    splits = synthesize(spec)
    refs, hyps = [], []
    for utterance in splits["test"]:
        refs.append(utterance.reference)
        hyps.append(nearest_prototype_decode(utterance.frames, prototypes, spec.alphabet))
    assert wer_breakdown(refs, hyps).cer == 0.0


def test_all_noise_has_empty_references():
    splits = synthesize(small_spec(noise_fraction=1.0))
    for utterances in splits.values():
        for utterance in utterances:
            assert utterance.reference == ""
            assert utterance.tags["noise"]


def test_split_sizes_and_ids():
    splits = synthesize(small_spec())
    assert {name: len(u) for name, u in splits.items()} == {"train": 6, "dev": 2, "test": 3}
    assert splits["dev"][1].id == "dev-00001"


def test_references_respect_length_and_boundaries():
    spec = small_spec(min_symbols=3, max_symbols=6, n_train=40)
    for utterance in synthesize(spec)["train"]:
        assert 3 <= len(utterance.reference) <= 6
        assert not utterance.reference.startswith(" ")
        assert not utterance.reference.endswith(" ")
        assert "  " not in utterance.reference


def test_frame_durations():
    spec = small_spec(noise_sigma=0.0)
    for utterance in synthesize(spec)["train"]:
        n_symbols = len(utterance.reference)
        assert spec.dmin * n_symbols <= utterance.n_frames <= spec.dmax * n_symbols


def test_same_seed_gives_identical_files(tmp_path):
    spec = small_spec()
    first = generate_dataset(spec, tmp_path / "one")
    second = generate_dataset(spec, tmp_path / "two")
    for key in first:
        assert first[key].read_bytes() == second[key].read_bytes(), key
    other = generate_dataset(small_spec(seed=8), tmp_path / "three")
    assert other["train"].read_bytes() != first["train"].read_bytes()


def test_prototypes_round_trip(tmp_path):
    spec = small_spec()
    generate_dataset(spec, tmp_path)
    loaded = load_prototypes(tmp_path)
    assert list(loaded) == spec.alphabet
    np.testing.assert_allclose(np.vstack(list(loaded.values())), make_prototypes(spec), rtol=1e-12)


def test_divergence_zero_shares_the_test_chain():
    a = TextChain.from_seed(3, 1, 0.5)
    b = TextChain.from_seed(3, 2, 0.5)
    np.testing.assert_array_equal(a.mixed_with(b, 0.0).table, b.table)
    np.testing.assert_allclose(a.table.sum(axis=2), 1.0)


def test_utterance_file_round_trip(tmp_path):
    frames = SeededRng(3).normal(size=(4, 2)).astype(np.float32).astype(np.float64)
    utterances = [Utterance("train-00000", frames, "ab c"), Utterance("train-00001", frames[:1], "")]
    path = DataProcessor.write_utterances(tmp_path / "train.utts", utterances)
    loaded = DataProcessor.read_utterances(path)
    assert [u.id for u in loaded] == ["train-00000", "train-00001"]
    assert loaded[0].reference == "ab c"
    np.testing.assert_array_equal(loaded[0].frames, frames)


def test_utterance_file_version_check(tmp_path):
    path = tmp_path / "bad.utts"
    path.write_text("#utts\tversion\t9\n", encoding="utf-8")
    with pytest.raises(FormatVersionError):
        DataProcessor.read_utterances(path)


def test_data_profile():
    profile = DataProcessor.get_data_profile(synthesize(small_spec(noise_fraction=1.0))["train"])
    assert profile["utterances"] == 6
    assert profile["empty_references"] == 6


def test_generated_dataset_records_its_profile(tmp_path):
    spec = small_spec()
    paths = generate_dataset(spec, tmp_path)
    with open(paths["profile"], "r", encoding="utf-8") as handle:
        profiles = json.load(handle)
    assert set(profiles) == {"train", "dev", "test"}
    for split, profile in profiles.items():
        utterances = DataProcessor.read_utterances(paths[split])
        assert profile == pytest.approx(DataProcessor.get_data_profile(utterances))
