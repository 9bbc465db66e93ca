import logging
import math
import os
import sys
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from components.network import model_loss
from components.network_layers import Parameters
from config.settings import ModelSpec, TrainConfig
from utils.errors import NonFiniteError, NumericalAbortError, TransducerError
from utils.numerics import SeededRng

logger = logging.getLogger(__name__)

# weight-noise streams sit far from the per-epoch shuffle streams
_NOISE_STREAM_OFFSET = 1_000_003


def clip_by_global_norm(grad: np.ndarray, clip_norm: float) -> Tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(grad))
    if math.isfinite(clip_norm) and norm > clip_norm:
        return grad * (clip_norm / norm), norm
    return grad, norm


def train(spec: ModelSpec, params: Parameters, dataset: Sequence, cfg: TrainConfig,
          on_epoch: Optional[Callable[[Dict], None]] = None) -> Tuple[Parameters, List[Dict]]:
    """Minibatch SGD over ``dataset``; returns the trained copy and per-epoch metrics.

    Shuffling uses a child generator per epoch, and gradients inside a batch
    are summed in utterance-id order, so results depend only on the seed.
    """
    if not dataset:
        raise TransducerError("cannot train on an empty dataset")
    rng = SeededRng(cfg.seed)
    params = params.copy()
    velocity = np.zeros_like(params.vector)
    lr = cfg.lr
    step = 0
    metrics: List[Dict] = []

    for epoch in range(cfg.epochs):
        order = rng.child(epoch).permutation(len(dataset))
        epoch_loss = 0.0
        epoch_symbols = 0
        last_norm = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = sorted((dataset[i] for i in order[start:start + cfg.batch_size]), key=lambda u: u.id)
            forward_params = params
            if cfg.weight_noise > 0:
                forward_params = params.copy()
                noise_rng = rng.child(_NOISE_STREAM_OFFSET + step)
                forward_params.vector += noise_rng.normal(0.0, cfg.weight_noise, size=params.size)

            grad = np.zeros_like(params.vector)
            for utterance in batch:
                try:
                    result = model_loss(spec, forward_params, utterance)
                except NonFiniteError as exc:
                    raise NumericalAbortError(utterance.id, math.nan) from exc
                if not math.isfinite(result.loss) or not np.isfinite(result.grad).all():
                    raise NumericalAbortError(utterance.id, result.loss)
                grad += result.grad
                epoch_loss += result.loss
                epoch_symbols += result.symbols
            grad /= len(batch)
            grad, last_norm = clip_by_global_norm(grad, cfg.clip_norm)

            if cfg.momentum > 0:
                velocity = cfg.momentum * velocity + grad
                params.vector -= lr * velocity
            else:
                params.vector -= lr * grad
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break

        row = {
            "epoch": epoch,
            "steps": step,
            "lr": lr,
            "loss": epoch_loss,
            "per_symbol_nll": epoch_loss / max(epoch_symbols, 1),
            "grad_norm": last_norm,
        }
        metrics.append(row)
        logger.info("%s epoch %d: loss %.4f (%.4f nats/symbol), lr %.4g",
                    spec.kind, epoch, row["loss"], row["per_symbol_nll"], lr)
        if on_epoch is not None:
            on_epoch(row)
        lr *= cfg.anneal
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    return params, metrics


def dataset_loss(spec: ModelSpec, params: Parameters, dataset: Sequence) -> Tuple[float, float]:
    """(total loss, per-symbol loss) over ``dataset`` without updating."""
    total = 0.0
    symbols = 0
    for utterance in sorted(dataset, key=lambda u: u.id):
        result = model_loss(spec, params, utterance)
        total += result.loss
        symbols += result.symbols
    return total, total / max(symbols, 1)
