#!/usr/bin/env python3
"""
Tests for decoding runs, the decoder ablation, sweeps and alignment export
"""

import json
import math
import os
import sys

import numpy as np
import pandas as pd
import pytest

# Add the project root to the path
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.append(ROOT)

from components.data_generator import synthesize
from components.experiment_runner import (
    BEAM,
    BEAM_LM,
    GREEDY,
    ExperimentRunner,
    ablation_trends,
    ablation_variants,
    alignment_matrices,
    decode_split,
    downsample_trends,
    dump_noise_triples,
    export_alignment,
    feasible_subset,
    parity_matched_forward,
    run_decoder_ablation,
    run_downsample_sweep,
    score_records,
    tune_lm_weights,
    with_downsample,
    write_ablation_report,
)
from components.language_model import train_ngram
from components.network import count_parameters, init_parameters
from components.trainer import train
from config.settings import DecodeConfig, ExperimentConfig
from utils.data_processing import Utterance
from utils.errors import TransducerError
from utils.report_generator import ReportGenerator

SMOKE_CONFIG = os.path.join(ROOT, "config", "smoke_experiment.json")
DEFAULT_CONFIG = os.path.join(ROOT, "config", "experiment_defaults.json")


@pytest.fixture(scope="module")
def smoke():
    experiment = ExperimentConfig.from_file(SMOKE_CONFIG)
    splits = synthesize(experiment.synthetic)
    lm = train_ngram([u.reference for u in splits["train"]], n=experiment.lm_order, k=experiment.lm_k,
                     vocab=experiment.synthetic.alphabet)
    models = {}
    for kind, spec in experiment.models.items():
        params, _ = train(spec, init_parameters(spec, 1), splits["train"], experiment.train)
        models[kind] = (spec, params)
    return experiment, splits, lm, models


def test_ablation_rows_per_kind():
    cfg = DecodeConfig(gamma=1.0, beta_cov=0.5, lam=0.5, alpha=0.3, beta_wc=1.0)
    assert [v.label for v in ablation_variants("ctc", cfg)] == ["greedy", "beam", "beam + LM fusion"]
    assert len(ablation_variants("rnnt", cfg)) == 3
    attention = ablation_variants("attention", cfg)
    assert len(attention) == 9
    length_norm = next(v for v in attention if v.label == "beam + length norm")
    assert (length_norm.cfg.gamma, length_norm.cfg.beta_cov, length_norm.cfg.lam) == (1.0, 0.0, 0.0)
    assert attention[1].cfg.gamma == 0.0


def test_decode_records_are_in_id_order(smoke):
    experiment, splits, lm, models = smoke
    spec, params = models["rnnt"]
    shuffled = list(reversed(splits["test"]))
    records = decode_split(spec, params, shuffled, GREEDY, experiment.decode, lm)
    assert [r["id"] for r in records] == sorted(u.id for u in splits["test"])
    assert {r["mode"] for r in records} == {GREEDY}


def test_beam_lm_requires_lm(smoke):
    experiment, splits, _, models = smoke
    spec, params = models["ctc"]
    with pytest.raises(TransducerError):
        decode_split(spec, params, splits["test"], BEAM_LM, experiment.decode, None)


def test_zero_weight_rescoring_matches_plain_beam(smoke, tmp_path):
    experiment, splits, lm, models = smoke
    cfg = experiment.decode.model_copy(update={"lam": 0.0})
    table, flags = run_decoder_ablation(models, lm, splits["test"], cfg, beam_widths=[1], seed=1)
    for kind in ("rnnt", "attention"):
        rows = table[table["kind"] == kind].set_index("decoder")
        assert rows.loc["beam + LM rescoring", "wer"] == rows.loc["beam", "wer"]
    assert set(table["kind"]) == {"ctc", "rnnt", "attention"}
    assert (table["wer"] == table["subs"] + table["ins"] + table["dels"]).all()
    assert "all_kinds_lm_at_most_greedy" in flags

    paths = write_ablation_report(table, flags, tmp_path)
    assert pd.read_csv(paths["csv"]).shape[0] == len(table)
    assert "Decoder ablation" in paths["text"].read_text(encoding="utf-8")


def test_ablation_is_reproducible(smoke):
    experiment, splits, lm, models = smoke
    first, _ = run_decoder_ablation({"ctc": models["ctc"]}, lm, splits["dev"], experiment.decode, seed=3)
    second, _ = run_decoder_ablation({"ctc": models["ctc"]}, lm, splits["dev"], experiment.decode, seed=3)
    pd.testing.assert_frame_equal(first, second)


def test_ablation_trends_flags():
    table = pd.DataFrame([
        {"kind": "ctc", "decoder": "greedy", "wer": 30.0},
        {"kind": "ctc", "decoder": "beam + LM fusion", "wer": 20.0},
        {"kind": "rnnt", "decoder": "greedy", "wer": 25.0},
        {"kind": "rnnt", "decoder": "beam + LM rescoring", "wer": 26.0},
    ])
    flags = ablation_trends(table)
    assert flags == {"ctc_lm_at_most_greedy": True, "rnnt_lm_at_most_greedy": False,
                     "all_kinds_lm_at_most_greedy": False, "ctc_lm_relative_gain_10pct": True}


@pytest.mark.parametrize("kind", ["ctc", "rnnt", "attention"])
def test_tuned_lm_weights_never_lose_to_plain_beam(smoke, kind):
    experiment, splits, lm, models = smoke
    spec, params = models[kind]
    grid = [0.5, 1.0]
    tuned, table = tune_lm_weights(models[kind], lm, splits["dev"], experiment.decode, grid)

    zero = experiment.decode.model_copy(update={"alpha": 0.0, "beta_wc": 0.0, "gamma": 0.0, "beta_cov": 0.0,
                                                "lam": 0.0})
    plain = score_records(decode_split(spec, params, splits["dev"], BEAM, zero)).wer
    assert table["wer"].min() <= plain
    names = ["alpha", "beta_wc"] if kind == "ctc" else ["lam"]
    assert len(table) == 3 ** len(names)
    for name in names:
        assert getattr(tuned, name) in (0.0, 0.5, 1.0)


def test_tuning_needs_utterances(smoke):
    experiment, _, lm, models = smoke
    with pytest.raises(TransducerError):
        tune_lm_weights(models["ctc"], lm, [], experiment.decode, [1.0])


def test_tuned_ablation_lm_rows_match_beam_on_the_tune_split(smoke):
    experiment, splits, lm, models = smoke
    table, flags = run_decoder_ablation(models, lm, splits["dev"], experiment.decode, seed=1,
                                        tune_set=splits["dev"], lm_grid=[0.5, 1.0])
    for kind in ("ctc", "rnnt", "attention"):
        rows = table[table["kind"] == kind].set_index("decoder")
        with_lm = "beam + LM fusion" if kind == "ctc" else "beam + LM rescoring"
        assert rows.loc[with_lm, "wer"] <= rows.loc["beam", "wer"]
    assert set(flags) >= {"all_kinds_lm_at_most_greedy", "ctc_lm_relative_gain_10pct"}


def test_runner_writes_ablation_reports(smoke, tmp_path):
    experiment, splits, lm, models = smoke
    runner = ExperimentRunner(experiment, tmp_path, seed=5)
    table, flags = runner.ablate({"ctc": models["ctc"]}, lm, splits["test"], beam_widths=[2], tune_set=splits["dev"])
    assert list(table["decoder"]) == ["greedy", "beam", "beam + LM fusion", "beam (width 2)"]
    assert pd.read_csv(tmp_path / "ablation.csv").shape[0] == len(table)
    with open(tmp_path / "ablation_trends.json", "r", encoding="utf-8") as handle:
        assert json.load(handle) == flags


def test_noise_triples_cover_every_kind(smoke):
    experiment, splits, lm, models = smoke
    noise = Utterance("noise-00000", np.full((6, 6), 0.5), "")
    speech = sorted(splits["test"], key=lambda u: u.id)[0]
    triples = dump_noise_triples(models, lm, [speech, noise], experiment.decode)
    assert [t["kind"] for t in triples] == ["ctc", "rnnt", "attention"]
    assert {t["id"] for t in triples} == {"noise-00000"}
    for triple in triples:
        spec, params = models[triple["kind"]]
        for mode in (GREEDY, BEAM, BEAM_LM):
            expected = decode_split(spec, params, [noise], mode, experiment.decode, lm)[0]
            assert triple[mode] == expected["hypothesis"]
            assert triple[f"{mode}_unterminated"] == expected["unterminated"]


@pytest.mark.parametrize("kind", ["ctc", "rnnt", "attention"])
def test_alignment_matrices(smoke, kind, tmp_path):
    _, splits, _, models = smoke
    spec, params = models[kind]
    utterance = splits["test"][0]
    n_labels = len(utterance.reference)
    matrices = alignment_matrices(spec, params, utterance)
    if kind == "ctc":
        assert matrices["path"].shape == (2 * n_labels + 1, utterance.n_frames)
        np.testing.assert_array_equal(matrices["path"].sum(axis=0), 1.0)
        np.testing.assert_allclose(matrices["posterior"].sum(axis=0), 1.0, atol=1e-9)
    elif kind == "rnnt":
        path = matrices["path"]
        assert path.shape == (n_labels + 1, utterance.n_frames)
        # every lattice step visits one node; consecutive steps share a row or a column
        assert path.sum() == utterance.n_frames + n_labels
    else:
        weights = matrices["attention"]
        assert weights.shape == (n_labels + 1, utterance.n_frames)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-9)

    paths = export_alignment(spec, params, utterance, tmp_path)
    for name, path in paths.items():
        assert path.exists(), name
        if name.endswith("_pgm"):
            image = ReportGenerator.read_pgm(path)
            matrix = matrices[name[:-len("_pgm")]]
            assert image.shape == matrix.shape


def test_alignment_needs_reference(smoke):
    _, _, _, models = smoke
    spec, params = models["ctc"]
    with pytest.raises(TransducerError):
        alignment_matrices(spec, params, Utterance("noise-0", np.zeros((4, spec.feature_dim)), ""))


def test_with_downsample_rebuilds_the_stack():
    spec = ExperimentConfig.from_file(DEFAULT_CONFIG).models["ctc"]
    assert spec.frames_per_step() == 2
    assert with_downsample(spec, 8).frames_per_step() == 8
    flat = with_downsample(spec, 1)
    assert flat.frames_per_step() == 1
    assert all(layer.kind != "downsample" for layer in flat.encoder)


def test_infeasible_ctc_utterances_are_dropped():
    spec = with_downsample(ExperimentConfig.from_file(SMOKE_CONFIG).models["ctc"], 2)
    fits = Utterance("a", np.zeros((8, 6)), "ab")
    too_short = Utterance("b", np.zeros((4, 6)), "aab")
    kept, dropped = feasible_subset(spec, [fits, too_short])
    assert [u.id for u in kept] == ["a"]
    assert dropped == 1


def test_sweep_counts_utterances_too_short_for_the_factor():
    experiment = ExperimentConfig.from_file(SMOKE_CONFIG)
    short = [Utterance("x", np.zeros((3, 6)), "a")]
    table, _, _ = run_downsample_sweep({"ctc": experiment.models["ctc"]}, [4], short, short,
                                       experiment.train, experiment.decode, [1])
    assert table.loc[0, "dropped"] == 1
    assert math.isnan(table.loc[0, "final_loss"])
    assert 0.0 <= table.loc[0, "wer"]


def test_sweep_runs_on_default_data():
    experiment = ExperimentConfig.from_file(DEFAULT_CONFIG)
    splits = synthesize(experiment.synthetic)
    shortest = min(u.n_frames for split in splits.values() for u in split)
    assert shortest >= max(experiment.sweep_factors)

    train_set = sorted((u for u in splits["train"] if u.reference), key=lambda u: (u.n_frames, u.id))[:4]
    eval_set = sorted(splits["dev"], key=lambda u: (u.n_frames, u.id))[:2]
    train_cfg = experiment.train.model_copy(update={"epochs": 1, "max_steps": 1})
    decode_cfg = experiment.decode.model_copy(update={"beam_width": 2, "max_output_len": 12})
    table, summary, flags = run_downsample_sweep(experiment.models, experiment.sweep_factors, train_set, eval_set,
                                                 train_cfg, decode_cfg, [1])
    assert len(table) == 3 * len(experiment.sweep_factors)
    assert set(table[table["factor"] == 1]["kind"]) == {"ctc", "rnnt", "attention"}
    assert (table["frames_per_step"] == table["factor"]).all()
    ctc = table[table["kind"] == "ctc"].set_index("factor")
    assert ctc.loc[1, "dropped"] == 0
    # the shortest utterances carry at least 4 labels in about 8 frames
    assert ctc.loc[8, "dropped"] == len(train_set)
    assert len(summary) == len(table)
    assert set(flags) == {"attention_degrades_less_than_ctc"}


def test_small_sweep_runs(smoke):
    experiment, splits, _, _ = smoke
    train_cfg = experiment.train.model_copy(update={"epochs": 1})
    table, summary, flags = run_downsample_sweep({"attention": experiment.models["attention"]}, [1, 2],
                                                 splits["train"], splits["dev"], train_cfg, experiment.decode, [1])
    assert list(table["factor"]) == [1, 2]
    assert list(summary["frames_per_step"]) == [1, 2]
    assert flags == {}


def test_downsample_trend_flag():
    summary = pd.DataFrame([
        {"kind": "ctc", "factor": 2, "wer": 10.0},
        {"kind": "ctc", "factor": 8, "wer": 40.0},
        {"kind": "attention", "factor": 2, "wer": 12.0},
        {"kind": "attention", "factor": 8, "wer": 15.0},
    ])
    assert downsample_trends(summary) == {"attention_degrades_less_than_ctc": True}


@pytest.mark.parametrize("config", [SMOKE_CONFIG, DEFAULT_CONFIG])
def test_forward_only_parity(config):
    for spec in ExperimentConfig.from_file(config).models.values():
        forward, gap = parity_matched_forward(spec)
        assert all(layer.kind != "bidirectional_rnn" for layer in forward.encoder)
        assert gap <= 0.15
        target = count_parameters(spec)
        assert abs(count_parameters(forward) - target) / target == pytest.approx(gap)
