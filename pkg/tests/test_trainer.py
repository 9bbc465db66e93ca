#!/usr/bin/env python3
"""
Tests for the minibatch SGD trainer
"""

import math
import os
import sys

import numpy as np
import pytest

# Add the project root to the path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from components.network import init_parameters
from components.trainer import clip_by_global_norm, dataset_loss, train
from config.settings import AttentionSpec, LayerSpec, ModelSpec, TrainConfig
from utils.data_processing import Utterance
from utils.errors import NumericalAbortError, TransducerError
from utils.numerics import SeededRng


def small_spec(kind):
    encoder = [LayerSpec(kind="bidirectional_rnn", width=3)]
    decoder, attention = [], None
    if kind == "rnnt":
        decoder = [LayerSpec(kind="embedding", width=3), LayerSpec(kind="rnn_cell", width=4)]
    elif kind == "attention":
        decoder = [LayerSpec(kind="embedding", width=3), LayerSpec(kind="attention_decoder", width=4)]
        attention = AttentionSpec(attention_dim=4, conv_kernel=3, conv_channels=2)
    return ModelSpec(kind=kind, alphabet=list("ab"), feature_dim=3, encoder=encoder,
                     decoder=decoder, attention=attention)


def small_dataset(n=4):
    rng = SeededRng(77)
    references = ["ab", "ba", "a", "bab", "b", "aab"]
    return [Utterance(f"train-{i:05d}", rng.normal(size=(6, 3)), references[i % len(references)])
            for i in range(n)]


def test_clip_by_global_norm():
    grad = np.array([3.0, 4.0])
    clipped, norm = clip_by_global_norm(grad, 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose(clipped, [0.6, 0.8])
    unclipped, _ = clip_by_global_norm(grad, math.inf)
    np.testing.assert_array_equal(unclipped, grad)


def test_zero_learning_rate_keeps_parameters():
    spec = small_spec("ctc")
    params = init_parameters(spec, 1)
    trained, metrics = train(spec, params, small_dataset(), TrainConfig(lr=0.0, epochs=2, batch_size=2))
    assert trained.vector.tobytes() == params.vector.tobytes()
    assert [row["epoch"] for row in metrics] == [0, 1]


def test_training_does_not_modify_its_input():
    spec = small_spec("rnnt")
    params = init_parameters(spec, 1)
    before = params.vector.copy()
    train(spec, params, small_dataset(), TrainConfig(lr=0.1, epochs=1, batch_size=2))
    np.testing.assert_array_equal(params.vector, before)


def test_same_seed_same_trajectory():
    spec = small_spec("attention")
    cfg = TrainConfig(lr=0.1, epochs=2, batch_size=3, weight_noise=0.01, momentum=0.5, seed=5)
    first, first_metrics = train(spec, init_parameters(spec, 2), small_dataset(5), cfg)
    second, second_metrics = train(spec, init_parameters(spec, 2), small_dataset(5), cfg)
    assert first.vector.tobytes() == second.vector.tobytes()
    assert first_metrics == second_metrics


def test_infinite_and_huge_clip_agree():
    spec = small_spec("ctc")
    dataset = small_dataset()
    runs = [
        train(spec, init_parameters(spec, 3), dataset, TrainConfig(lr=0.05, epochs=1, batch_size=2, clip_norm=clip))[0]
        for clip in (math.inf, 1e12)
    ]
    np.testing.assert_array_equal(runs[0].vector, runs[1].vector)


def test_learning_rate_anneals_and_steps_stop():
    spec = small_spec("ctc")
    cfg = TrainConfig(lr=0.1, epochs=5, batch_size=2, anneal=0.5, max_steps=3)
    _, metrics = train(spec, init_parameters(spec, 0), small_dataset(4), cfg)
    assert [row["lr"] for row in metrics] == [0.1, 0.05]
    assert metrics[-1]["steps"] == 3


@pytest.mark.parametrize("kind", ["ctc", "rnnt", "attention"])
def test_training_reduces_loss(kind):
    spec = small_spec(kind)
    dataset = small_dataset(1)
    params = init_parameters(spec, 4)
    before, _ = dataset_loss(spec, params, dataset)
    trained, _ = train(spec, params, dataset, TrainConfig(lr=0.1, epochs=30, batch_size=1, clip_norm=5.0))
    after, _ = dataset_loss(spec, trained, dataset)
    assert after < before


@pytest.mark.parametrize("kind", ["ctc", "rnnt", "attention"])
def test_single_utterance_overfits(kind):
    spec = small_spec(kind)
    dataset = small_dataset(1)
    cfg = TrainConfig(lr=0.1, epochs=500, batch_size=1, clip_norm=5.0, max_steps=500)
    trained, metrics = train(spec, init_parameters(spec, 4), dataset, cfg)
    assert metrics[-1]["steps"] <= 500
    _, per_symbol = dataset_loss(spec, trained, dataset)
    assert per_symbol < 0.1


def test_non_finite_loss_aborts():
    spec = small_spec("ctc")
    params = init_parameters(spec, 0)
    params.vector[0] = np.nan
    with pytest.raises(NumericalAbortError) as excinfo:
        train(spec, params, small_dataset(2), TrainConfig(lr=0.1, epochs=1, batch_size=2))
    assert excinfo.value.utterance_id == "train-00000"


def test_empty_dataset():
    spec = small_spec("ctc")
    with pytest.raises(TransducerError):
        train(spec, init_parameters(spec, 0), [], TrainConfig())
