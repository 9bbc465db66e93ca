"""Validated configuration models.

Everything a run can be configured with is a pydantic model here so that the
CLI, the JSON experiment files and the library share one set of invariants.
"""

import hashlib
import json
import math
from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from config.app_config import AppConfig

LayerKind = Literal["dense", "rnn_cell", "bidirectional_rnn", "downsample", "embedding", "attention_decoder"]
ModelKind = Literal["ctc", "rnnt", "attention"]


class LayerSpec(BaseModel):
    kind: LayerKind
    width: int = Field(1, ge=1)
    factor: int = Field(1, ge=1)
    direction: Literal["forward", "bidirectional"] = "forward"

    @model_validator(mode="after")
    def _check_direction(self):
        if self.kind == "bidirectional_rnn" and self.direction != "bidirectional":
            self.direction = "bidirectional"
        if self.kind == "rnn_cell" and self.direction != "forward":
            raise ValueError("rnn_cell layers are forward-only; use bidirectional_rnn")
        if self.kind != "downsample" and self.factor != 1:
            raise ValueError(f"{self.kind} layers cannot change the time axis (factor must be 1)")
        return self

    def output_width(self) -> int:
        return 2 * self.width if self.kind == "bidirectional_rnn" else self.width

    def short_name(self) -> str:
        """Compact notation in the style of ``[2x32 biLSTM, pool(2)]``."""
        if self.kind == "downsample":
            return f"pool({self.factor})->{self.width}"
        if self.kind == "bidirectional_rnn":
            return f"{self.width} biLSTM"
        if self.kind == "rnn_cell":
            return f"{self.width} LSTM"
        return f"{self.width} {self.kind}"


class AttentionSpec(BaseModel):
    attention_dim: int = Field(16, ge=1)
    conv_kernel: int = Field(AppConfig.DEFAULT_CONV_KERNEL, ge=1)
    conv_channels: int = Field(AppConfig.DEFAULT_CONV_CHANNELS, ge=1)

    @field_validator("conv_kernel")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("location convolution kernel width must be odd")
        return value


class ModelSpec(BaseModel):
    kind: ModelKind
    alphabet: List[str]
    feature_dim: int = Field(16, ge=1)
    encoder: List[LayerSpec]
    decoder: List[LayerSpec] = Field(default_factory=list)
    attention: Optional[AttentionSpec] = None

    @field_validator("alphabet")
    @classmethod
    def _unique_symbols(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("alphabet needs at least one symbol")
        if len(set(value)) != len(value):
            raise ValueError("alphabet symbols must be unique")
        if any(len(sym) != 1 for sym in value):
            raise ValueError("alphabet symbols must be single characters")
        return value

    @model_validator(mode="after")
    def _check_stack(self):
        if not self.encoder:
            raise ValueError("encoder needs at least one layer")
        for layer in self.encoder:
            if layer.kind in ("embedding", "attention_decoder"):
                raise ValueError(f"{layer.kind} layers belong to the decoder")
        if self.kind == "ctc" and self.decoder:
            raise ValueError("ctc models have no decoder")
        if self.kind == "rnnt":
            if not self.decoder or self.decoder[0].kind != "embedding":
                raise ValueError("rnnt prediction network must start with an embedding layer")
            for layer in self.decoder[1:]:
                if layer.kind not in ("rnn_cell", "dense"):
                    raise ValueError("rnnt prediction network layers must be forward rnn_cell or dense")
        if self.kind == "attention":
            kinds = [layer.kind for layer in self.decoder]
            if kinds != ["embedding", "attention_decoder"]:
                raise ValueError("attention decoder must be [embedding, attention_decoder]")
            if self.attention is None:
                self.attention = AttentionSpec()
        return self

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet)

    @property
    def blank_id(self) -> int:
        return len(self.alphabet)

    def frames_per_step(self) -> int:
        """Input frames per encoder step (product of downsample factors)."""
        return math.prod(layer.factor for layer in self.encoder)

    def notation(self) -> str:
        return "[" + ", ".join(layer.short_name() for layer in self.encoder) + "]"

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def spec_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


class DecodeConfig(BaseModel):
    beam_width: int = Field(AppConfig.DEFAULT_BEAM_WIDTH, ge=1)
    alpha: float = 0.0       # LM fusion weight (CTC)
    beta_wc: float = 0.0     # word-count bonus (CTC)
    gamma: float = Field(0.0, ge=0.0, le=1.0)   # length normalization exponent
    beta_cov: float = 0.0    # coverage weight
    lam: float = 0.0         # rescoring LM weight
    max_symbols_per_step: int = Field(AppConfig.DEFAULT_MAX_SYMBOLS_PER_STEP, ge=1)
    max_output_len: int = Field(AppConfig.DEFAULT_MAX_OUTPUT_LEN, ge=1)

    @classmethod
    def length_norm_only(cls, **overrides) -> "DecodeConfig":
        """Attention preset: length normalization only (gamma=1, beta_cov=0)."""
        return cls(**{**overrides, "gamma": 1.0, "beta_cov": 0.0})

    def no_lm(self) -> "DecodeConfig":
        return self.model_copy(update={"alpha": 0.0, "beta_wc": 0.0, "lam": 0.0})


class TrainConfig(BaseModel):
    lr: float = Field(0.05, ge=0.0)
    clip_norm: float = Field(5.0, gt=0.0)
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(4, ge=1)
    anneal: float = Field(1.0, gt=0.0, le=1.0)
    momentum: float = Field(0.0, ge=0.0, lt=1.0)
    weight_noise: float = Field(0.0, ge=0.0)
    max_steps: Optional[int] = Field(None, ge=1)
    seed: int = AppConfig.DEFAULT_SEED


class SyntheticSpec(BaseModel):
    alphabet: List[str] = Field(default_factory=lambda: list("abcdefgh "))
    feature_dim: int = Field(16, ge=1)
    dmin: int = Field(2, ge=1)
    dmax: int = Field(4, ge=1)
    noise_sigma: float = Field(0.3, ge=0.0)
    silence_prob: float = Field(0.1, ge=0.0, le=1.0)
    noise_fraction: float = Field(0.05, ge=0.0, le=1.0)
    min_symbols: int = Field(4, ge=1)
    max_symbols: int = Field(8, ge=1)
    text_seed_train: int = 11
    text_seed_test: int = 12
    divergence: float = Field(0.5, ge=0.0, le=1.0)
    concentration: float = Field(0.3, gt=0.0)
    n_train: int = Field(200, ge=1)
    n_dev: int = Field(40, ge=0)
    n_test: int = Field(40, ge=0)
    lm_corpus_lines: int = Field(2000, ge=1)
    seed: int = AppConfig.DEFAULT_SEED

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.dmax < self.dmin:
            raise ValueError("dmax must be >= dmin")
        if self.max_symbols < self.min_symbols:
            raise ValueError("max_symbols must be >= min_symbols")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ValueError("alphabet symbols must be unique")
        return self


class ExperimentConfig(BaseModel):
    synthetic: SyntheticSpec = Field(default_factory=SyntheticSpec)
    models: Dict[ModelKind, ModelSpec]
    train: TrainConfig = Field(default_factory=TrainConfig)
    decode: DecodeConfig = Field(default_factory=DecodeConfig)
    lm_order: int = Field(AppConfig.DEFAULT_LM_ORDER, ge=1, le=6)
    lm_k: float = Field(AppConfig.DEFAULT_LM_K, gt=0.0)
    ablation_beam_widths: List[int] = Field(default_factory=list)
    sweep_factors: List[int] = Field(default_factory=lambda: [1, 2, 4, 8])
    sweep_seeds: List[int] = Field(default_factory=lambda: [1, 2, 3])
    lm_weight_grid: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0, 2.0])
    tune_split: Optional[str] = "dev"

    @field_validator("lm_weight_grid")
    @classmethod
    def _check_grid(cls, grid: List[float]) -> List[float]:
        if any(w < 0 or not math.isfinite(w) for w in grid):
            raise ValueError("LM weights must be finite and non-negative")
        return grid

    @field_validator("tune_split")
    @classmethod
    def _check_tune_split(cls, split: Optional[str]) -> Optional[str]:
        if split is not None and split not in AppConfig.DATASET_SPLITS:
            raise ValueError(f"tune_split must be one of {AppConfig.DATASET_SPLITS} or null")
        return split

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(Path(path), "r", encoding="utf-8") as handle:
            return cls.model_validate(json.load(handle))
