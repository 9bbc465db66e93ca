#!/usr/bin/env python3
"""Command-line entry point: data generation, training, decoding and experiments.

Exit codes: 0 on success, 2 for invalid input or configuration, 3 when
training or scoring hits a non-finite value.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
from dotenv import load_dotenv

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from components.data_generator import generate_dataset
from components.experiment_runner import (
    BEAM,
    BEAM_LM,
    GREEDY,
    ExperimentRunner,
    decode_split,
    dump_noise_triples,
    export_alignment,
    score_records,
)
from components.language_model import load_lm, save_lm, train_ngram
from components.model_io import load_model, save_model
from components.network import init_parameters
from components.trainer import train
from config.app_config import AppConfig
from config.settings import DecodeConfig, ExperimentConfig, TrainConfig
from utils.data_processing import DataProcessor
from utils.errors import NonFiniteError, NumericalAbortError, TransducerError
from utils.logging_config import setup_logging
from utils.report_generator import ReportGenerator

logger = logging.getLogger("transducer_cli")

DECODE_FIELDS = ("beam_width", "alpha", "beta_wc", "gamma", "beta_cov", "lam",
                 "max_symbols_per_step", "max_output_len")
TRAIN_FIELDS = ("lr", "clip_norm", "epochs", "batch_size", "anneal", "momentum", "weight_noise", "max_steps")


# ---------------------------------------------------------------------------
# Shared option handling
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="master seed (default: $TRANSDUCER_SEED or 1234)")
    parser.add_argument("--out-dir", default=None, help="output directory (default: $TRANSDUCER_OUT_DIR or ./runs)")
    parser.add_argument("--config", default=AppConfig.DEFAULT_EXPERIMENT_CONFIG, help="experiment JSON file")
    parser.add_argument("--log-level", default=None)


def _add_decode_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--beam_width", type=int)
    parser.add_argument("--alpha", type=float, help="LM fusion weight (CTC)")
    parser.add_argument("--beta_wc", type=float, help="word-count bonus (CTC)")
    parser.add_argument("--gamma", type=float, help="length normalization exponent (attention)")
    parser.add_argument("--beta_cov", type=float, help="coverage weight (attention)")
    parser.add_argument("--lam", type=float, help="LM rescoring weight")
    parser.add_argument("--max_symbols_per_step", type=int)
    parser.add_argument("--max_output_len", type=int)


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lr", type=float)
    parser.add_argument("--clip_norm", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch_size", type=int)
    parser.add_argument("--anneal", type=float)
    parser.add_argument("--momentum", type=float)
    parser.add_argument("--weight_noise", type=float)
    parser.add_argument("--max_steps", type=int)


def _overrides(args: argparse.Namespace, fields: Sequence[str]) -> Dict:
    return {name: getattr(args, name) for name in fields if getattr(args, name, None) is not None}


def _seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.getenv(AppConfig.ENV_SEED, AppConfig.DEFAULT_SEED))


def _out_dir(args: argparse.Namespace) -> Path:
    path = Path(args.out_dir or os.getenv(AppConfig.ENV_OUT_DIR) or AppConfig.DEFAULT_OUT_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _experiment(args: argparse.Namespace) -> ExperimentConfig:
    return ExperimentConfig.from_file(args.config)


def _decode_config(args: argparse.Namespace, experiment: ExperimentConfig) -> DecodeConfig:
    return DecodeConfig.model_validate({**experiment.decode.model_dump(), **_overrides(args, DECODE_FIELDS)})


def _train_config(args: argparse.Namespace, experiment: ExperimentConfig) -> TrainConfig:
    merged = {**experiment.train.model_dump(), **_overrides(args, TRAIN_FIELDS), "seed": _seed(args)}
    return TrainConfig.model_validate(merged)


def _load_models(paths: Sequence[str]) -> Dict:
    models = {}
    for path in paths:
        spec, params = load_model(path)
        models[spec.kind] = (spec, params)
    return models


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace) -> int:
    experiment = _experiment(args)
    spec = experiment.synthetic.model_copy(update={"seed": _seed(args)})
    paths = generate_dataset(spec, _out_dir(args))
    for name, path in paths.items():
        logger.info("%s: %s", name, path)
    return AppConfig.EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    experiment = _experiment(args)
    if args.kind not in experiment.models:
        raise TransducerError(f"{args.config} has no {args.kind} model")
    spec = experiment.models[args.kind]
    cfg = _train_config(args, experiment)
    dataset = DataProcessor.load_split(args.data_dir, "train")
    params = init_parameters(spec, cfg.seed)
    logger.info("training %s %s (%d parameters) on %d utterances", spec.kind, spec.notation(),
                params.size, len(dataset))
    params, metrics = train(spec, params, dataset, cfg)
    out_dir = _out_dir(args)
    save_model(out_dir / f"{spec.kind}.model", spec, params)
    ReportGenerator.write_csv(pd.DataFrame(metrics), out_dir / f"train_{spec.kind}.csv")
    return AppConfig.EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    experiment = _experiment(args)
    cfg = _decode_config(args, experiment)
    spec, params = load_model(args.model)
    lm = load_lm(args.lm) if args.lm else None
    utterances = DataProcessor.load_split(args.data_dir, args.split)
    records = decode_split(spec, params, utterances, args.mode, cfg, lm)
    out_dir = _out_dir(args)
    ReportGenerator.write_jsonl(records, out_dir / f"decode_{spec.kind}_{args.mode}.jsonl")
    report = score_records(records, cfg, _seed(args))
    ReportGenerator.write_csv(pd.DataFrame([report.to_row()]), out_dir / f"metrics_{spec.kind}_{args.mode}.csv")
    if args.dump_noise:
        if lm is None:
            raise TransducerError("--dump-noise needs --lm for the rescored transcript")
        triples = dump_noise_triples({spec.kind: (spec, params)}, lm, utterances, cfg)
        ReportGenerator.write_jsonl(triples, out_dir / f"noise_{spec.kind}.jsonl")
    logger.info("%s %s: WER %.2f, CER %.2f", spec.kind, args.mode, report.wer, report.cer)
    return AppConfig.EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    records = pd.read_json(args.decodes, lines=True, dtype={"reference": str, "hypothesis": str})
    records = records.fillna({"reference": "", "hypothesis": ""}).to_dict("records")
    report = score_records(records, seed=_seed(args))
    out_dir = _out_dir(args)
    ReportGenerator.write_csv(pd.DataFrame([report.to_row()]), out_dir / f"{Path(args.decodes).stem}.metrics.csv")
    ReportGenerator.write_json(report.to_dict(), out_dir / f"{Path(args.decodes).stem}.metrics.json")
    logger.info("WER %.2f (S %.2f / I %.2f / D %.2f), CER %.2f", report.wer, report.subs, report.ins,
                report.dels, report.cer)
    return AppConfig.EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    experiment = _experiment(args)
    runner = ExperimentRunner(experiment, _out_dir(args), _seed(args), decode_cfg=_decode_config(args, experiment))
    models = _load_models(args.models)
    lm = load_lm(args.lm)
    dataset = DataProcessor.load_split(args.data_dir, args.split)
    tune_split = args.tune_split if args.tune_split is not None else experiment.tune_split
    tune_set = None
    if tune_split not in (None, "none"):
        tune_set = DataProcessor.load_split(args.data_dir, tune_split)
    runner.ablate(models, lm, dataset, args.beam_widths, tune_set=tune_set)
    return AppConfig.EXIT_OK


def cmd_sweep_downsample(args: argparse.Namespace) -> int:
    experiment = _experiment(args)
    runner = ExperimentRunner(experiment, _out_dir(args), _seed(args), _train_config(args, experiment),
                              _decode_config(args, experiment))
    train_set = DataProcessor.load_split(args.data_dir, "train")
    eval_set = DataProcessor.load_split(args.data_dir, args.split)
    runner.sweep_downsample(train_set, eval_set, args.factors, args.seeds)
    return AppConfig.EXIT_OK


def cmd_forward_only(args: argparse.Namespace) -> int:
    experiment = _experiment(args)
    runner = ExperimentRunner(experiment, _out_dir(args), _seed(args), _train_config(args, experiment),
                              _decode_config(args, experiment))
    train_set = DataProcessor.load_split(args.data_dir, "train")
    eval_set = DataProcessor.load_split(args.data_dir, args.split)
    runner.forward_only(train_set, eval_set)
    return AppConfig.EXIT_OK


def cmd_align(args: argparse.Namespace) -> int:
    spec, params = load_model(args.model)
    utterances = {u.id: u for u in DataProcessor.load_split(args.data_dir, args.split)}
    if args.utt_id not in utterances:
        raise TransducerError(f"utterance {args.utt_id} not found in the {args.split} split")
    paths = export_alignment(spec, params, utterances[args.utt_id], _out_dir(args))
    for name, path in paths.items():
        logger.info("%s: %s", name, path)
    return AppConfig.EXIT_OK


def cmd_train_lm(args: argparse.Namespace) -> int:
    experiment = _experiment(args)
    corpus = DataProcessor.read_lm_corpus(args.data_dir)
    order = args.n if args.n is not None else experiment.lm_order
    k = args.k if args.k is not None else experiment.lm_k
    lm = train_ngram(corpus, n=order, k=k, vocab=experiment.synthetic.alphabet)
    path = save_lm(lm, _out_dir(args) / "lm.txt")
    logger.info("trained %d-gram LM on %d lines: %s", order, len(corpus), path)
    return AppConfig.EXIT_OK


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transducer_cli", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("gen-data", help="write a synthetic dataset")
    _add_common(sub)
    sub.set_defaults(handler=cmd_gen_data)

    sub = commands.add_parser("train", help="train one model kind")
    _add_common(sub)
    _add_train_flags(sub)
    sub.add_argument("--kind", required=True, choices=AppConfig.MODEL_KINDS)
    sub.add_argument("--data-dir", required=True)
    sub.set_defaults(handler=cmd_train)

    sub = commands.add_parser("decode", help="decode a split with one model")
    _add_common(sub)
    _add_decode_flags(sub)
    sub.add_argument("--model", required=True)
    sub.add_argument("--lm")
    sub.add_argument("--data-dir", required=True)
    sub.add_argument("--split", default="test", choices=AppConfig.DATASET_SPLITS)
    sub.add_argument("--mode", default=BEAM, choices=(GREEDY, BEAM, BEAM_LM))
    sub.add_argument("--dump-noise", action="store_true", help="also write greedy/beam/rescored transcripts of noise utterances")
    sub.set_defaults(handler=cmd_decode)

    sub = commands.add_parser("score", help="score a decode JSON-lines file")
    _add_common(sub)
    sub.add_argument("--decodes", required=True)
    sub.set_defaults(handler=cmd_score)

    sub = commands.add_parser("ablate", help="decoder ablation over trained models")
    _add_common(sub)
    _add_decode_flags(sub)
    sub.add_argument("--models", nargs="+", required=True)
    sub.add_argument("--lm", required=True)
    sub.add_argument("--data-dir", required=True)
    sub.add_argument("--split", default="test", choices=AppConfig.DATASET_SPLITS)
    sub.add_argument("--beam-widths", type=int, nargs="*", default=None)
    sub.add_argument("--tune-split", choices=AppConfig.DATASET_SPLITS + ("none",),
                     help="split the LM weights are tuned on (default: tune_split in the config)")
    sub.set_defaults(handler=cmd_ablate)

    sub = commands.add_parser("sweep-downsample", help="train and score every kind at several pooling factors")
    _add_common(sub)
    _add_train_flags(sub)
    _add_decode_flags(sub)
    sub.add_argument("--data-dir", required=True)
    sub.add_argument("--split", default="dev", choices=AppConfig.DATASET_SPLITS)
    sub.add_argument("--factors", type=int, nargs="*")
    sub.add_argument("--seeds", type=int, nargs="*")
    sub.set_defaults(handler=cmd_sweep_downsample)

    sub = commands.add_parser("forward-only", help="bidirectional vs parameter-matched forward-only encoders")
    _add_common(sub)
    _add_train_flags(sub)
    _add_decode_flags(sub)
    sub.add_argument("--data-dir", required=True)
    sub.add_argument("--split", default="dev", choices=AppConfig.DATASET_SPLITS)
    sub.set_defaults(handler=cmd_forward_only)

    sub = commands.add_parser("align", help="export alignment heatmaps for one utterance")
    _add_common(sub)
    sub.add_argument("--model", required=True)
    sub.add_argument("--data-dir", required=True)
    sub.add_argument("--split", default="test", choices=AppConfig.DATASET_SPLITS)
    sub.add_argument("--utt-id", required=True)
    sub.set_defaults(handler=cmd_align)

    sub = commands.add_parser("train-lm", help="train the character n-gram LM on the dataset corpus")
    _add_common(sub)
    sub.add_argument("--data-dir", required=True)
    sub.add_argument("--n", type=int)
    sub.add_argument("--k", type=float)
    sub.set_defaults(handler=cmd_train_lm)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except (NumericalAbortError, NonFiniteError) as exc:
        logger.error("numerical failure: %s", exc)
        return AppConfig.EXIT_NUMERICAL
    except (ValueError, FileNotFoundError) as exc:
        # TransducerError and pydantic's ValidationError are both ValueErrors
        logger.error("invalid input: %s", exc)
        return AppConfig.EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
