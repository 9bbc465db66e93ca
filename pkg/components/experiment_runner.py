"""Experiments over trained transducers: decoder ablation, downsampling sweep,
forward-only comparison and alignment export.

Every runner returns pandas tables; ``write_*`` helpers persist them through
``ReportGenerator`` so CSV bytes depend only on configs and seeds. Decoding
walks utterances in id order.
"""

import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from components.decoders import (
    Hypothesis,
    attention_beam,
    attention_greedy,
    ctc_greedy,
    ctc_prefix_beam,
    rescore_with_lm,
    rnnt_beam,
    rnnt_greedy,
)
from components.attention_decoder import teacher_forced
from components.language_model import NGramLM
from components.losses import Alphabet, alignment_posterior, best_alignment, ctc_min_frames, joint_combine
from components.network import count_parameters, ctc_logits, encoder_forward, init_parameters, prediction_forward, scorer_for
from components.network_layers import Parameters
from components.scoring import wer_breakdown
from components.trainer import train
from config.app_config import AppConfig
from config.settings import DecodeConfig, ExperimentConfig, LayerSpec, ModelSpec, TrainConfig
from utils.data_processing import Utterance
from utils.errors import TransducerError
from utils.numerics import log_softmax
from utils.report_generator import ReportGenerator

logger = logging.getLogger(__name__)

Model = Tuple[ModelSpec, Parameters]

GREEDY, BEAM, BEAM_LM = "greedy", "beam", "beam_lm"


@dataclass
class DecoderVariant:
    label: str
    mode: str
    cfg: DecodeConfig


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

def finished_beam(spec: ModelSpec, params: Parameters, utterance: Utterance, cfg: DecodeConfig) -> List[Hypothesis]:
    """Ranked beam of an RNN-T or attention model, before any LM rescoring."""
    encoded, _ = encoder_forward(spec, params, utterance.frames)
    scorer = scorer_for(spec, params, encoded)
    if spec.kind == "rnnt":
        return rnnt_beam(encoded, scorer, cfg)
    return attention_beam(scorer, cfg)


def decode_one(spec: ModelSpec, params: Parameters, utterance: Utterance, mode: str, cfg: DecodeConfig,
               lm: Optional[NGramLM] = None) -> Hypothesis:
    """Decode one utterance with greedy search, plain beam search, or beam search with the LM."""
    if mode == BEAM_LM and lm is None:
        raise TransducerError("beam + LM decoding needs a language model")
    alphabet = Alphabet.from_symbols(spec.alphabet)

    if spec.kind == "ctc":
        logits = ctc_logits(spec, params, utterance.frames)
        if mode == GREEDY:
            best_path = log_softmax(logits, axis=1).max(axis=1).sum()
            return Hypothesis(tokens=tuple(ctc_greedy(logits)), log_p_model=float(best_path), kind="ctc", alive=False)
        if mode == BEAM:
            return ctc_prefix_beam(logits, None, cfg.no_lm())[0]
        return ctc_prefix_beam(logits, lm, cfg, alphabet)[0]

    if mode == GREEDY:
        encoded, _ = encoder_forward(spec, params, utterance.frames)
        scorer = scorer_for(spec, params, encoded)
        if spec.kind == "rnnt":
            return rnnt_greedy(encoded, scorer, cfg)
        return attention_greedy(scorer, cfg)
    beam = finished_beam(spec, params, utterance, cfg)
    if mode == BEAM:
        return beam[0]
    return rescore_with_lm(beam, lm, cfg.lam, cfg, alphabet)[0]


def decode_split(spec: ModelSpec, params: Parameters, utterances: Sequence[Utterance], mode: str,
                 cfg: DecodeConfig, lm: Optional[NGramLM] = None) -> List[Dict]:
    alphabet = Alphabet.from_symbols(spec.alphabet)
    records = []
    for utterance in sorted(utterances, key=lambda u: u.id):
        hyp = decode_one(spec, params, utterance, mode, cfg, lm)
        records.append({
            "id": utterance.id,
            "kind": spec.kind,
            "mode": mode,
            "reference": utterance.reference,
            "hypothesis": hyp.text(alphabet),
            "score": hyp.final_score(cfg),
            "truncated": hyp.truncated,
            "unterminated": hyp.unterminated,
        })
    return records


def score_records(records: Sequence[Dict], cfg: Optional[DecodeConfig] = None, seed: Optional[int] = None):
    return wer_breakdown([r["reference"] for r in records], [r["hypothesis"] for r in records],
                         config=cfg.model_dump() if cfg is not None else None, seed=seed)


# ---------------------------------------------------------------------------
# Decoder ablation
# ---------------------------------------------------------------------------

def ablation_variants(kind: str, cfg: DecodeConfig) -> List[DecoderVariant]:
    """Rows evaluated for ``kind``; the weights in ``cfg`` are the values a row turns on."""
    base = cfg.model_copy(update={"alpha": 0.0, "beta_wc": 0.0, "gamma": 0.0, "beta_cov": 0.0, "lam": 0.0})
    variants = [DecoderVariant("greedy", GREEDY, base), DecoderVariant("beam", BEAM, base)]
    if kind == "ctc":
        fused = base.model_copy(update={"alpha": cfg.alpha, "beta_wc": cfg.beta_wc})
        variants.append(DecoderVariant("beam + LM fusion", BEAM_LM, fused))
        return variants
    rescore = base.model_copy(update={"lam": cfg.lam})
    variants.append(DecoderVariant("beam + LM rescoring", BEAM_LM, rescore))
    if kind == "attention":
        settings = [
            ("length norm", {"gamma": cfg.gamma}),
            ("coverage", {"beta_cov": cfg.beta_cov}),
            ("length norm + coverage", {"gamma": cfg.gamma, "beta_cov": cfg.beta_cov}),
        ]
        for name, update in settings:
            variants.append(DecoderVariant(f"beam + {name}", BEAM, base.model_copy(update=update)))
            variants.append(DecoderVariant(f"beam + {name} + LM rescoring", BEAM_LM,
                                           rescore.model_copy(update=update)))
    return variants


def tune_lm_weights(model: Model, lm: NGramLM, tune_set: Sequence[Utterance], cfg: DecodeConfig,
                    grid: Sequence[float]) -> Tuple[DecodeConfig, pd.DataFrame]:
    """Pick the LM weights with the lowest WER on ``tune_set``.

    CTC searches alpha x beta_wc for shallow fusion; RNN-T and attention decode
    one beam per utterance and rescore it for every lam. Zero is always a
    candidate and ties keep the smaller weights, so on ``tune_set`` the chosen
    weights never score worse than plain beam search.
    """
    if not tune_set:
        raise TransducerError("cannot tune LM weights on an empty split")
    spec, params = model
    alphabet = Alphabet.from_symbols(spec.alphabet)
    weights = sorted({0.0, *(float(w) for w in grid)})
    utterances = sorted(tune_set, key=lambda u: u.id)
    references = [u.reference for u in utterances]
    base = cfg.model_copy(update={"alpha": 0.0, "beta_wc": 0.0, "gamma": 0.0, "beta_cov": 0.0, "lam": 0.0})

    rows = []
    if spec.kind == "ctc":
        logits = [ctc_logits(spec, params, u.frames) for u in utterances]
        for alpha in weights:
            for beta_wc in weights:
                trial = base.model_copy(update={"alpha": alpha, "beta_wc": beta_wc})
                hyps = [ctc_prefix_beam(x, lm, trial, alphabet)[0].text(alphabet) for x in logits]
                rows.append({"alpha": alpha, "beta_wc": beta_wc, "wer": wer_breakdown(references, hyps).wer})
    else:
        beams = [finished_beam(spec, params, u, base) for u in utterances]
        for lam in weights:
            hyps = [rescore_with_lm(beam, lm, lam, base, alphabet)[0].text(alphabet) for beam in beams]
            rows.append({"lam": lam, "wer": wer_breakdown(references, hyps).wer})

    table = pd.DataFrame(rows)
    best = table.loc[table["wer"].idxmin()]
    chosen = {name: float(best[name]) for name in table.columns if name != "wer"}
    logger.info("%s LM weights tuned on %d utterances: %s (WER %.2f)", spec.kind, len(utterances), chosen,
                best["wer"])
    return cfg.model_copy(update=chosen), table


def run_decoder_ablation(models: Dict[str, Model], lm: NGramLM, dataset: Sequence[Utterance],
                         cfg: DecodeConfig, beam_widths: Sequence[int] = (),
                         seed: Optional[int] = None, tune_set: Optional[Sequence[Utterance]] = None,
                         lm_grid: Sequence[float] = ()) -> Tuple[pd.DataFrame, Dict[str, bool]]:
    """WER of every decoder variant for every model kind, plus trend flags.

    With ``tune_set`` the LM weights of each kind are first chosen over
    ``lm_grid`` on that split; otherwise the weights in ``cfg`` are used.
    """
    rows = []
    for kind in AppConfig.MODEL_KINDS:
        if kind not in models:
            continue
        spec, params = models[kind]
        kind_cfg = cfg
        if tune_set is not None:
            kind_cfg, _ = tune_lm_weights(models[kind], lm, tune_set, cfg, lm_grid)
        variants = ablation_variants(kind, kind_cfg)
        for width in beam_widths:
            grid_cfg = variants[1].cfg.model_copy(update={"beam_width": int(width)})
            variants.append(DecoderVariant(f"beam (width {width})", BEAM, grid_cfg))
        for variant in variants:
            records = decode_split(spec, params, dataset, variant.mode, variant.cfg, lm)
            report = score_records(records, variant.cfg, seed)
            logger.info("%s %-40s WER %.2f", kind, variant.label, report.wer)
            rows.append({
                "kind": kind,
                "decoder": variant.label,
                "beam_width": 1 if variant.mode == GREEDY else variant.cfg.beam_width,
                "alpha": variant.cfg.alpha,
                "beta_wc": variant.cfg.beta_wc,
                "gamma": variant.cfg.gamma,
                "beta_cov": variant.cfg.beta_cov,
                "lam": variant.cfg.lam,
                **report.to_row(),
                "truncated": sum(r["truncated"] for r in records),
                "unterminated": sum(r["unterminated"] for r in records),
            })
    table = pd.DataFrame(rows)
    return table, ablation_trends(table)


def ablation_trends(table: pd.DataFrame) -> Dict[str, bool]:
    """Per kind: is beam + LM no worse than greedy decoding; for CTC, is the gain at least 10% relative."""
    flags: Dict[str, bool] = {}
    if table.empty:
        return flags
    gains: Dict[str, float] = {}
    for kind, group in table.groupby("kind", sort=False):
        greedy = group.loc[group["decoder"] == "greedy", "wer"]
        with_lm = group.loc[group["decoder"].str.contains("LM"), "wer"]
        if len(greedy) and len(with_lm):
            flags[f"{kind}_lm_at_most_greedy"] = bool(with_lm.min() <= greedy.iloc[0])
            gains[kind] = (greedy.iloc[0] - with_lm.min()) / greedy.iloc[0] if greedy.iloc[0] > 0 else 0.0
    if flags:
        flags["all_kinds_lm_at_most_greedy"] = all(flags.values())
    if "ctc" in gains:
        flags["ctc_lm_relative_gain_10pct"] = bool(gains["ctc"] >= 0.10)
    return flags


def write_ablation_report(table: pd.DataFrame, flags: Dict[str, bool], out_dir) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    return {
        "csv": ReportGenerator.write_csv(table, out_dir / "ablation.csv"),
        "text": ReportGenerator.write_text_table(
            table[["kind", "decoder", "beam_width", "wer", "subs", "ins", "dels", "cer"]],
            out_dir / "ablation.txt", "Decoder ablation (WER %)", flags),
        "flags": ReportGenerator.write_json(flags, out_dir / "ablation_trends.json"),
    }


def dump_noise_triples(models: Dict[str, Model], lm: NGramLM, dataset: Sequence[Utterance],
                       cfg: DecodeConfig) -> List[Dict]:
    """Greedy, beam and rescored transcripts of the empty-reference utterances."""
    records = []
    noise = [u for u in sorted(dataset, key=lambda u: u.id) if not u.reference]
    for kind in AppConfig.MODEL_KINDS:
        if kind not in models:
            continue
        spec, params = models[kind]
        alphabet = Alphabet.from_symbols(spec.alphabet)
        for utterance in noise:
            triple = {"id": utterance.id, "kind": kind}
            for mode in (GREEDY, BEAM, BEAM_LM):
                hyp = decode_one(spec, params, utterance, mode, cfg, lm)
                triple[mode] = hyp.text(alphabet)
                triple[f"{mode}_unterminated"] = hyp.unterminated
            records.append(triple)
    return records


# ---------------------------------------------------------------------------
# Training helpers shared by the sweeps
# ---------------------------------------------------------------------------

def ctc_feasible(spec: ModelSpec, utterance: Utterance) -> bool:
    labels = Alphabet.from_symbols(spec.alphabet).encode(utterance.reference)
    steps = math.ceil(utterance.n_frames / spec.frames_per_step())
    return steps >= ctc_min_frames(labels)


def feasible_subset(spec: ModelSpec, utterances: Sequence[Utterance]) -> Tuple[List[Utterance], int]:
    """Drop utterances shorter than the pooling factor and, for CTC, those no alignment fits."""
    factor = spec.frames_per_step()
    kept = [u for u in utterances if u.n_frames >= factor and (spec.kind != "ctc" or ctc_feasible(spec, u))]
    return kept, len(utterances) - len(kept)


def train_and_score(spec: ModelSpec, train_set: Sequence[Utterance], eval_set: Sequence[Utterance],
                    train_cfg: TrainConfig, decode_cfg: DecodeConfig, seed: int) -> Dict:
    """Train on the utterances that fit ``spec`` and score beam search on the whole eval set.

    Eval utterances that cannot be aligned are still decoded, so their errors
    count against the model; ``dropped`` counts the training utterances left out.
    """
    train_kept, train_dropped = feasible_subset(spec, train_set)
    if not eval_set:
        raise TransducerError("cannot score an empty eval set")
    params = init_parameters(spec, seed)
    final_loss = math.nan
    if train_kept:
        params, metrics = train(spec, params, train_kept, train_cfg.model_copy(update={"seed": seed}))
        final_loss = metrics[-1]["per_symbol_nll"]
    else:
        logger.warning("no %s training utterance fits at %d frames per step; scoring the initial model",
                       spec.kind, spec.frames_per_step())
    records = decode_split(spec, params, eval_set, BEAM, decode_cfg.no_lm())
    report = score_records(records, decode_cfg, seed)
    return {
        "wer": report.wer,
        "cer": report.cer,
        "final_loss": final_loss,
        "parameters": params.size,
        "dropped": train_dropped,
    }


# ---------------------------------------------------------------------------
# Downsampling sweep
# ---------------------------------------------------------------------------

def with_downsample(spec: ModelSpec, factor: int) -> ModelSpec:
    """Replace every pooling layer by one ``factor``-fold pooling after the first layer."""
    layers = [layer for layer in spec.encoder if layer.kind != "downsample"]
    if factor > 1:
        width = layers[0].output_width()
        layers.insert(1, LayerSpec(kind="downsample", factor=factor, width=width))
    return ModelSpec.model_validate({**spec.model_dump(), "encoder": [layer.model_dump() for layer in layers]})


def run_downsample_sweep(base_specs: Dict[str, ModelSpec], factors: Sequence[int], train_set: Sequence[Utterance],
                         eval_set: Sequence[Utterance], train_cfg: TrainConfig, decode_cfg: DecodeConfig,
                         seeds: Sequence[int]) -> Tuple[pd.DataFrame, pd.DataFrame, Dict[str, bool]]:
    shortest = min(u.n_frames for u in list(train_set) + list(eval_set))
    if factors and max(factors) > shortest:
        logger.warning("largest factor %d exceeds the shortest utterance (%d frames); shorter utterances are "
                       "dropped at that factor", max(factors), shortest)
    rows = []
    for kind in AppConfig.MODEL_KINDS:
        if kind not in base_specs:
            continue
        for factor in factors:
            spec = with_downsample(base_specs[kind], factor)
            for seed in seeds:
                result = train_and_score(spec, train_set, eval_set, train_cfg, decode_cfg, seed)
                logger.info("%s factor %d seed %d: WER %.2f (%d dropped)", kind, factor, seed,
                            result["wer"], result["dropped"])
                rows.append({"kind": kind, "factor": factor, "frames_per_step": spec.frames_per_step(),
                             "seed": seed, **result})
    table = pd.DataFrame(rows)
    summary = (table.groupby(["kind", "factor", "frames_per_step"], sort=False)[["wer", "dropped"]]
               .mean().reset_index()) if not table.empty else table
    return table, summary, downsample_trends(summary)


def downsample_trends(summary: pd.DataFrame) -> Dict[str, bool]:
    """Attention should lose no more than CTC going from 2x to 8x pooling."""
    def degradation(kind: str) -> Optional[float]:
        rows = summary[summary["kind"] == kind].set_index("factor")["wer"] if not summary.empty else None
        if rows is None or 2 not in rows.index or 8 not in rows.index:
            return None
        return float(rows[8] - rows[2])

    attention, ctc = degradation("attention"), degradation("ctc")
    if attention is None or ctc is None:
        return {}
    return {"attention_degrades_less_than_ctc": attention <= ctc}


# ---------------------------------------------------------------------------
# Forward-only comparison
# ---------------------------------------------------------------------------

def forward_only_variant(spec: ModelSpec, shrink: int = 0) -> ModelSpec:
    layers = [
        LayerSpec(kind="rnn_cell", width=max(2 * layer.width - shrink, 1)) if layer.kind == "bidirectional_rnn" else layer
        for layer in spec.encoder
    ]
    return ModelSpec.model_validate({**spec.model_dump(), "encoder": [layer.model_dump() for layer in layers]})


def parity_matched_forward(spec: ModelSpec) -> Tuple[ModelSpec, float]:
    """Start at twice the bidirectional width and shrink until parameters are within tolerance."""
    target = count_parameters(spec)
    widest = max((2 * layer.width for layer in spec.encoder if layer.kind == "bidirectional_rnn"), default=1)
    best, best_gap = forward_only_variant(spec), math.inf
    for shrink in range(widest):
        candidate = forward_only_variant(spec, shrink)
        gap = abs(count_parameters(candidate) - target) / target
        if gap < best_gap:
            best, best_gap = candidate, gap
        if gap <= AppConfig.FORWARD_ONLY_PARITY:
            return candidate, gap
    return best, best_gap


def run_forward_only(base_specs: Dict[str, ModelSpec], train_set: Sequence[Utterance], eval_set: Sequence[Utterance],
                     train_cfg: TrainConfig, decode_cfg: DecodeConfig, seed: int) -> pd.DataFrame:
    rows = []
    for kind in AppConfig.MODEL_KINDS:
        if kind not in base_specs:
            continue
        bidirectional = base_specs[kind]
        forward, gap = parity_matched_forward(bidirectional)
        for variant, spec in (("bidirectional", bidirectional), ("forward_only", forward)):
            result = train_and_score(spec, train_set, eval_set, train_cfg, decode_cfg, seed)
            rows.append({
                "kind": kind,
                "variant": variant,
                "encoder": spec.notation(),
                "parameter_gap": gap,
                "parity_ok": gap <= AppConfig.FORWARD_ONLY_PARITY,
                **result,
            })
            logger.info("%s %s %s: %d parameters, WER %.2f", kind, variant, spec.notation(),
                        result["parameters"], result["wer"])
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Alignment export
# ---------------------------------------------------------------------------

def alignment_matrices(spec: ModelSpec, params: Parameters, utterance: Utterance) -> Dict[str, np.ndarray]:
    """Rows are label positions (expanded CTC states, RNN-T prediction steps or attention steps), columns encoder steps."""
    if not utterance.reference:
        raise TransducerError(f"utterance {utterance.id} has no reference to align against")
    labels = Alphabet.from_symbols(spec.alphabet).encode(utterance.reference)

    if spec.kind == "ctc":
        logits = ctc_logits(spec, params, utterance.frames)
        path = best_alignment("ctc", logits, labels)
        mask = np.zeros((2 * len(labels) + 1, logits.shape[0]))
        mask[path.states, np.arange(logits.shape[0])] = 1.0
        return {"path": mask, "posterior": alignment_posterior("ctc", logits, labels).T}

    encoded, _ = encoder_forward(spec, params, utterance.frames)
    if spec.kind == "rnnt":
        pred_out, _ = prediction_forward(spec, params, [spec.blank_id] + labels)
        joint = joint_combine(encoded @ params["joint.enc.W"] + params["joint.enc.b"],
                              pred_out @ params["joint.pred.W"])
        path = best_alignment("rnnt", joint, labels)
        mask = np.zeros((len(labels) + 1, encoded.shape[0]))
        for t, u, _ in path.steps:
            mask[u, t] = 1.0
        return {"path": mask, "posterior": alignment_posterior("rnnt", joint, labels).T}

    _, alphas, _, _ = teacher_forced(params, spec, encoded, labels)
    return {"attention": best_alignment("attention", alphas, labels).weights}


def export_alignment(spec: ModelSpec, params: Parameters, utterance: Utterance, out_dir) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    paths: Dict[str, Path] = {}
    for name, matrix in alignment_matrices(spec, params, utterance).items():
        stem = f"{utterance.id}.{spec.kind}.{name}"
        paths[f"{name}_csv"] = ReportGenerator.write_matrix_csv(matrix, out_dir / f"{stem}.csv")
        paths[f"{name}_pgm"] = ReportGenerator.write_pgm(matrix, out_dir / f"{stem}.pgm")
    return paths


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

class ExperimentRunner:
    """Runs the experiments of one experiment config and writes their reports."""

    def __init__(self, experiment: ExperimentConfig, out_dir, seed: int,
                 train_cfg: Optional[TrainConfig] = None, decode_cfg: Optional[DecodeConfig] = None):
        self.experiment = experiment
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.train_cfg = train_cfg or experiment.train.model_copy(update={"seed": seed})
        self.decode_cfg = decode_cfg or experiment.decode

    def ablate(self, models: Dict[str, Model], lm: NGramLM, dataset: Sequence[Utterance],
               beam_widths: Optional[Sequence[int]] = None,
               tune_set: Optional[Sequence[Utterance]] = None) -> Tuple[pd.DataFrame, Dict[str, bool]]:
        widths = self.experiment.ablation_beam_widths if beam_widths is None else beam_widths
        table, flags = run_decoder_ablation(models, lm, dataset, self.decode_cfg, widths, seed=self.seed,
                                            tune_set=tune_set, lm_grid=self.experiment.lm_weight_grid)
        write_ablation_report(table, flags, self.out_dir)
        return table, flags

    def sweep_downsample(self, train_set: Sequence[Utterance], eval_set: Sequence[Utterance],
                         factors: Optional[Sequence[int]] = None,
                         seeds: Optional[Sequence[int]] = None) -> Tuple[pd.DataFrame, pd.DataFrame, Dict[str, bool]]:
        table, summary, flags = run_downsample_sweep(
            self.experiment.models, factors or self.experiment.sweep_factors, train_set, eval_set,
            self.train_cfg, self.decode_cfg, seeds or self.experiment.sweep_seeds)
        ReportGenerator.write_csv(table, self.out_dir / "downsample_sweep.csv")
        ReportGenerator.write_csv(summary, self.out_dir / "downsample_summary.csv")
        ReportGenerator.write_text_table(summary, self.out_dir / "downsample_summary.txt",
                                         "Downsampling sweep (mean WER %)", flags)
        return table, summary, flags

    def forward_only(self, train_set: Sequence[Utterance], eval_set: Sequence[Utterance]) -> pd.DataFrame:
        table = run_forward_only(self.experiment.models, train_set, eval_set, self.train_cfg, self.decode_cfg,
                                 self.seed)
        ReportGenerator.write_csv(table, self.out_dir / "forward_only.csv")
        ReportGenerator.write_text_table(
            table[["kind", "variant", "encoder", "parameters", "parameter_gap", "parity_ok", "wer"]],
            self.out_dir / "forward_only.txt", "Bidirectional vs forward-only encoders")
        return table
