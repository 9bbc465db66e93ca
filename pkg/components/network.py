"""Model assembly: parameter layout, encoder, prediction network, losses and scorers.

Parameter names follow the layer position: ``enc{i}.*`` for encoder layers,
``ctc.*`` for the CTC projection, ``pred.emb`` / ``pred{j}.*`` and
``joint.*`` for the transducer, ``att.*`` / ``dec.*`` / ``out.*`` for the
attention decoder. Hidden dense layers use tanh; output projections are
linear.
"""

import logging
import os
import sys
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from components.attention_decoder import (
    AttentionState,
    attention_layout,
    attention_step,
    encoder_context,
    initial_state,
    teacher_forced,
    teacher_forced_backward,
)
from components.losses import (
    Alphabet,
    LossResult,
    attention_nll,
    ctc_loss,
    joint_combine,
    joint_grad_parts,
    rnnt_loss,
)
from components.network_layers import (
    Parameters,
    dense_backward,
    dense_forward,
    init_uniform,
    lstm_backward,
    lstm_cell_forward,
    lstm_forward,
    stack_frames,
    unstack_frames,
)
from config.settings import LayerSpec, ModelSpec
from utils.errors import NoAlignmentError, ShapeMismatchError
from utils.numerics import SeededRng, log_softmax

logger = logging.getLogger(__name__)

LayoutEntry = Tuple[str, Tuple[int, ...], int]


@dataclass
class ModelLossResult(LossResult):
    """Loss and flat gradient plus the number of scored symbols."""

    symbols: int = 1


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------

def _lstm_entries(prefix: str, n_in: int, width: int) -> List[LayoutEntry]:
    fan_in = n_in + width
    return [
        (f"{prefix}.Wx", (n_in, 4 * width), fan_in),
        (f"{prefix}.Wh", (width, 4 * width), fan_in),
        (f"{prefix}.b", (4 * width,), fan_in),
    ]


def _dense_entries(prefix: str, n_in: int, width: int) -> List[LayoutEntry]:
    return [(f"{prefix}.W", (n_in, width), n_in), (f"{prefix}.b", (width,), n_in)]


def build_layout(spec: ModelSpec) -> List[LayoutEntry]:
    entries: List[LayoutEntry] = []
    n_in = spec.feature_dim
    for i, layer in enumerate(spec.encoder):
        prefix = f"enc{i}"
        if layer.kind == "dense":
            entries += _dense_entries(prefix, n_in, layer.width)
        elif layer.kind == "rnn_cell":
            entries += _lstm_entries(prefix, n_in, layer.width)
        elif layer.kind == "bidirectional_rnn":
            entries += _lstm_entries(f"{prefix}.fwd", n_in, layer.width)
            entries += _lstm_entries(f"{prefix}.bwd", n_in, layer.width)
        elif layer.kind == "downsample":
            entries += _dense_entries(prefix, layer.factor * n_in, layer.width)
        n_in = layer.output_width()

    classes = spec.vocab_size + 1
    if spec.kind == "ctc":
        entries += _dense_entries("ctc", n_in, classes)
    elif spec.kind == "rnnt":
        emb = spec.decoder[0].width
        entries.append(("pred.emb", (classes, emb), emb))
        p_in = emb
        for j, layer in enumerate(spec.decoder[1:], start=1):
            if layer.kind == "rnn_cell":
                entries += _lstm_entries(f"pred{j}", p_in, layer.width)
            else:
                entries += _dense_entries(f"pred{j}", p_in, layer.width)
            p_in = layer.width
        entries += _dense_entries("joint.enc", n_in, classes)
        entries.append(("joint.pred.W", (p_in, classes), p_in))
    else:
        entries += attention_layout(spec, n_in)
    return entries


def empty_parameters(spec: ModelSpec) -> Parameters:
    return Parameters([(name, shape) for name, shape, _ in build_layout(spec)])


def init_parameters(spec: ModelSpec, seed: int) -> Parameters:
    """Uniform(+-1/sqrt(fan_in)) initialization, reproducible from ``seed``."""
    layout = build_layout(spec)
    params = Parameters([(name, shape) for name, shape, _ in layout])
    init_uniform(params, {name: fan_in for name, _, fan_in in layout}, SeededRng(seed))
    logger.debug("initialized %s model %s with %d parameters", spec.kind, spec.notation(), params.size)
    return params


def count_parameters(spec: ModelSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in build_layout(spec))


def frames_per_step(spec: ModelSpec) -> int:
    return spec.frames_per_step()


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

def _lstm_params(params: Parameters, prefix: str):
    return params[f"{prefix}.Wx"], params[f"{prefix}.Wh"], params[f"{prefix}.b"]


def _lstm_grads(grads: Parameters, prefix: str):
    return grads[f"{prefix}.Wx"], grads[f"{prefix}.Wh"], grads[f"{prefix}.b"]


def _layer_forward(layer: LayerSpec, prefix: str, params: Parameters, x: np.ndarray):
    if layer.kind == "dense":
        y = np.tanh(x @ params[f"{prefix}.W"] + params[f"{prefix}.b"])
        return y, (x, y)
    if layer.kind == "rnn_cell":
        return lstm_forward(x, *_lstm_params(params, prefix))
    if layer.kind == "bidirectional_rnn":
        forward_out, forward_cache = lstm_forward(x, *_lstm_params(params, f"{prefix}.fwd"))
        backward_out, backward_cache = lstm_forward(x[::-1], *_lstm_params(params, f"{prefix}.bwd"))
        return np.concatenate([forward_out, backward_out[::-1]], axis=1), (forward_cache, backward_cache)
    stacked = stack_frames(x, layer.factor)
    y, _ = dense_forward(stacked, params[f"{prefix}.W"], params[f"{prefix}.b"])
    return y, (stacked, x.shape[0])


def _layer_backward(layer: LayerSpec, prefix: str, params: Parameters, grads: Parameters, cache, d_out):
    if layer.kind == "dense":
        x, y = cache
        d_z = d_out * (1.0 - y ** 2)
        return dense_backward(d_z, x, params[f"{prefix}.W"], grads[f"{prefix}.W"], grads[f"{prefix}.b"])
    if layer.kind == "rnn_cell":
        Wx, Wh, _ = _lstm_params(params, prefix)
        return lstm_backward(d_out, cache, Wx, Wh, *_lstm_grads(grads, prefix))
    if layer.kind == "bidirectional_rnn":
        forward_cache, backward_cache = cache
        width = layer.width
        Wx, Wh, _ = _lstm_params(params, f"{prefix}.fwd")
        d_x = lstm_backward(d_out[:, :width], forward_cache, Wx, Wh, *_lstm_grads(grads, f"{prefix}.fwd"))
        Wx, Wh, _ = _lstm_params(params, f"{prefix}.bwd")
        d_rev = lstm_backward(d_out[::-1, width:], backward_cache, Wx, Wh, *_lstm_grads(grads, f"{prefix}.bwd"))
        return d_x + d_rev[::-1]
    stacked, n_frames = cache
    d_stacked = dense_backward(d_out, stacked, params[f"{prefix}.W"], grads[f"{prefix}.W"], grads[f"{prefix}.b"])
    return unstack_frames(d_stacked, layer.factor, n_frames)


def encoder_forward(spec: ModelSpec, params: Parameters, frames) -> Tuple[np.ndarray, List[Any]]:
    """T x F frames -> T' x D encoder output, with the cache for the backward pass."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeMismatchError(f"encoder needs a non-empty T x F matrix, got shape {x.shape}")
    if x.shape[1] != spec.feature_dim:
        raise ShapeMismatchError(f"frames have {x.shape[1]} features, model expects {spec.feature_dim}")
    caches = []
    for i, layer in enumerate(spec.encoder):
        x, cache = _layer_forward(layer, f"enc{i}", params, x)
        caches.append(cache)
    return x, caches


def encoder_backward(spec: ModelSpec, params: Parameters, grads: Parameters, caches: List[Any],
                     d_out: np.ndarray) -> np.ndarray:
    """Accumulate encoder gradients into ``grads``; returns d frames."""
    d = d_out
    for i in range(len(spec.encoder) - 1, -1, -1):
        d = _layer_backward(spec.encoder[i], f"enc{i}", params, grads, caches[i], d)
    return d


# ---------------------------------------------------------------------------
# Prediction network (RNN-T)
# ---------------------------------------------------------------------------

def prediction_forward(spec: ModelSpec, params: Parameters, inputs: Sequence[int]):
    x = params["pred.emb"][list(inputs)]
    caches = []
    for j, layer in enumerate(spec.decoder[1:], start=1):
        x, cache = _layer_forward(layer, f"pred{j}", params, x)
        caches.append(cache)
    return x, caches


def prediction_backward(spec: ModelSpec, params: Parameters, grads: Parameters, inputs: Sequence[int],
                        caches: List[Any], d_out: np.ndarray) -> None:
    d = d_out
    for j in range(len(spec.decoder) - 1, 0, -1):
        d = _layer_backward(spec.decoder[j], f"pred{j}", params, grads, caches[j - 1], d)
    np.add.at(grads["pred.emb"], list(inputs), d)


def prediction_step(spec: ModelSpec, params: Parameters, layer_states: Tuple, token: int):
    """Advance the prediction network by one token. Returns (new states, output)."""
    x = params["pred.emb"][token]
    new_states = []
    for j, layer in enumerate(spec.decoder[1:], start=1):
        prefix = f"pred{j}"
        if layer.kind == "rnn_cell":
            h, c = layer_states[j - 1]
            x, c, _ = lstm_cell_forward(x, h, c, *_lstm_params(params, prefix))
            new_states.append((x, c))
        else:
            x = np.tanh(x @ params[f"{prefix}.W"] + params[f"{prefix}.b"])
            new_states.append(None)
    return tuple(new_states), x


def _initial_prediction_states(spec: ModelSpec) -> Tuple:
    states = []
    for layer in spec.decoder[1:]:
        if layer.kind == "rnn_cell":
            states.append((np.zeros(layer.width), np.zeros(layer.width)))
        else:
            states.append(None)
    return tuple(states)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def ctc_logits(spec: ModelSpec, params: Parameters, frames) -> np.ndarray:
    encoded, _ = encoder_forward(spec, params, frames)
    return encoded @ params["ctc.W"] + params["ctc.b"]


def model_loss(spec: ModelSpec, params: Parameters, utterance) -> ModelLossResult:
    """Loss of one utterance and its gradient with respect to every parameter."""
    labels = Alphabet.from_symbols(spec.alphabet).encode(utterance.reference)
    encoded, enc_caches = encoder_forward(spec, params, utterance.frames)
    grads = params.zeros_like()

    if spec.kind == "ctc":
        logits = encoded @ params["ctc.W"] + params["ctc.b"]
        try:
            result = ctc_loss(logits, labels)
        except NoAlignmentError as exc:
            raise NoAlignmentError(exc.required, exc.available, utterance.id) from None
        d_enc = dense_backward(result.grad, encoded, params["ctc.W"], grads["ctc.W"], grads["ctc.b"])
    elif spec.kind == "rnnt":
        inputs = [spec.blank_id] + labels
        pred_out, pred_caches = prediction_forward(spec, params, inputs)
        h_proj = encoded @ params["joint.enc.W"] + params["joint.enc.b"]
        g_proj = pred_out @ params["joint.pred.W"]
        joint = joint_combine(h_proj, g_proj)
        result = rnnt_loss(joint, labels)
        d_h_proj, d_g_proj = joint_grad_parts(joint, result.grad)
        d_enc = dense_backward(d_h_proj, encoded, params["joint.enc.W"], grads["joint.enc.W"], grads["joint.enc.b"])
        grads["joint.pred.W"][...] += pred_out.T @ d_g_proj
        prediction_backward(spec, params, grads, inputs, pred_caches, d_g_proj @ params["joint.pred.W"].T)
    else:
        logits, _, caches, ctx = teacher_forced(params, spec, encoded, labels)
        result = attention_nll(logits, labels)
        d_enc = teacher_forced_backward(params, grads, ctx, caches, result.grad)

    encoder_backward(spec, params, grads, enc_caches, d_enc)
    return ModelLossResult(loss=result.loss, grad=grads.vector, symbols=max(len(labels), 1))


# ---------------------------------------------------------------------------
# Step scorers for decoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RnntState:
    frame: int
    layer_states: Tuple
    g_proj: np.ndarray


class RnntScorer:
    """Transducer lattice walker: blank moves to the next frame, symbols advance the prediction network."""

    def __init__(self, spec: ModelSpec, params: Parameters, encoded: np.ndarray):
        self.spec = spec
        self.params = params
        self.h_proj = encoded @ params["joint.enc.W"] + params["joint.enc.b"]
        self.n_frames = encoded.shape[0]
        self.vocab_size = spec.vocab_size
        self.blank_id = spec.blank_id
        self.sos_id = spec.blank_id
        self.eos_id = None

    def _advance(self, layer_states: Tuple, token: int):
        states, out = prediction_step(self.spec, self.params, layer_states, token)
        return states, out @ self.params["joint.pred.W"]

    def start(self) -> RnntState:
        states, g_proj = self._advance(_initial_prediction_states(self.spec), self.sos_id)
        return RnntState(0, states, g_proj)

    def distribution(self, state: RnntState) -> Optional[np.ndarray]:
        if state.frame >= self.n_frames:
            return None
        return log_softmax(self.h_proj[state.frame] + state.g_proj)

    def step(self, state: RnntState, token: int):
        if token == self.blank_id:
            new_state = RnntState(state.frame + 1, state.layer_states, state.g_proj)
        else:
            states, g_proj = self._advance(state.layer_states, token)
            new_state = RnntState(state.frame, states, g_proj)
        return new_state, self.distribution(new_state)


@dataclass(frozen=True)
class AttentionScorerState:
    decoder: AttentionState
    log_dist: np.ndarray
    alpha: np.ndarray


class AttentionScorer:
    def __init__(self, spec: ModelSpec, params: Parameters, encoded: np.ndarray):
        self.params = params
        self.ctx = encoder_context(params, encoded)
        self.n_frames = encoded.shape[0]
        self.vocab_size = spec.vocab_size
        self.sos_id = spec.vocab_size
        self.eos_id = spec.vocab_size + 1

    def _run(self, decoder: AttentionState, token: int) -> AttentionScorerState:
        logits, new_decoder, alpha, _ = attention_step(self.params, self.ctx, decoder, token)
        return AttentionScorerState(new_decoder, log_softmax(logits), alpha)

    def start(self) -> AttentionScorerState:
        return self._run(initial_state(self.params, self.n_frames), self.sos_id)

    def step(self, state: AttentionScorerState, token: int):
        new_state = self._run(state.decoder, token)
        return new_state, new_state.log_dist

    def distribution(self, state: AttentionScorerState) -> np.ndarray:
        return state.log_dist

    def attention(self, state: AttentionScorerState) -> np.ndarray:
        return state.alpha


def scorer_for(spec: ModelSpec, params: Parameters, encoder_output: np.ndarray):
    if spec.kind == "rnnt":
        return RnntScorer(spec, params, encoder_output)
    if spec.kind == "attention":
        return AttentionScorer(spec, params, encoder_output)
    raise ValueError("ctc models decode from frame logits and have no step scorer")
