"""Attention decoder: one step forward and its exact backward.

Each output step reads the previous token through an embedding and an
attention LSTM, scores every encoder step with a hybrid energy

    e_t = v . tanh(h_t W + s S + loc_t Q + b),   loc = conv(alpha_prev)

normalizes the energies into alpha, and feeds the context alpha.h together
with the attention state ``s`` to a decoder LSTM whose output is projected
onto V+2 classes (symbols, sos, eos).
"""

import os
import sys
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from components.network_layers import (
    LSTMCellCache,
    Parameters,
    location_conv_backward,
    location_conv_forward,
    lstm_cell_backward,
    lstm_cell_forward,
)
from config.settings import ModelSpec
from utils.numerics import softmax


@dataclass(frozen=True)
class AttentionState:
    att_h: np.ndarray
    att_c: np.ndarray
    dec_h: np.ndarray
    dec_c: np.ndarray
    alpha_prev: np.ndarray


@dataclass
class EncoderContext:
    """Encoder output with its per-utterance projection precomputed."""

    h: np.ndarray
    hW: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.h.shape[0]


@dataclass
class _StepCache:
    token: int
    att_cell: LSTMCellCache
    windows: np.ndarray
    loc: np.ndarray
    u: np.ndarray
    alpha: np.ndarray
    att_h: np.ndarray
    dec_cell: LSTMCellCache
    dec_h: np.ndarray


def attention_layout(spec: ModelSpec, encoder_width: int) -> List[Tuple[str, Tuple[int, ...], int]]:
    """(name, shape, fan_in) for every attention-decoder tensor."""
    vocab = spec.vocab_size
    emb = spec.decoder[0].width
    hidden = spec.decoder[1].width
    att = spec.attention
    dim, channels, kernel = att.attention_dim, att.conv_channels, att.conv_kernel
    dec_in = encoder_width + hidden
    return [
        ("att.emb", (vocab + 1, emb), emb),
        ("att.rnn.Wx", (emb, 4 * hidden), emb + hidden),
        ("att.rnn.Wh", (hidden, 4 * hidden), emb + hidden),
        ("att.rnn.b", (4 * hidden,), emb + hidden),
        ("att.W", (encoder_width, dim), encoder_width),
        ("att.S", (hidden, dim), hidden),
        ("att.Q", (channels, dim), channels),
        ("att.F", (channels, kernel), kernel),
        ("att.b", (dim,), dim),
        ("att.v", (dim,), dim),
        ("dec.rnn.Wx", (dec_in, 4 * hidden), dec_in + hidden),
        ("dec.rnn.Wh", (hidden, 4 * hidden), dec_in + hidden),
        ("dec.rnn.b", (4 * hidden,), dec_in + hidden),
        ("out.W", (hidden, vocab + 2), hidden),
        ("out.b", (vocab + 2,), hidden),
    ]


def encoder_context(params: Parameters, h: np.ndarray) -> EncoderContext:
    return EncoderContext(h=h, hW=h @ params["att.W"])


def initial_state(params: Parameters, n_frames: int) -> AttentionState:
    hidden = params["att.rnn.Wh"].shape[0]
    zeros = np.zeros(hidden)
    return AttentionState(zeros, zeros, zeros, zeros, np.full(n_frames, 1.0 / n_frames))


def attention_step(params: Parameters, ctx: EncoderContext, state: AttentionState, y_prev: int):
    """Returns (logits over V+2 classes, new state, alpha, cache)."""
    att_h, att_c, att_cell = lstm_cell_forward(
        params["att.emb"][y_prev], state.att_h, state.att_c,
        params["att.rnn.Wx"], params["att.rnn.Wh"], params["att.rnn.b"],
    )
    loc, windows = location_conv_forward(state.alpha_prev, params["att.F"])
    u = np.tanh(ctx.hW + att_h @ params["att.S"] + loc @ params["att.Q"] + params["att.b"])
    alpha = softmax(u @ params["att.v"])
    context = alpha @ ctx.h
    dec_h, dec_c, dec_cell = lstm_cell_forward(
        np.concatenate([context, att_h]), state.dec_h, state.dec_c,
        params["dec.rnn.Wx"], params["dec.rnn.Wh"], params["dec.rnn.b"],
    )
    logits = dec_h @ params["out.W"] + params["out.b"]
    new_state = AttentionState(att_h, att_c, dec_h, dec_c, alpha)
    cache = _StepCache(y_prev, att_cell, windows, loc, u, alpha, att_h, dec_cell, dec_h)
    return logits, new_state, alpha, cache


@dataclass
class _StateGrad:
    att_h: np.ndarray
    att_c: np.ndarray
    dec_h: np.ndarray
    dec_c: np.ndarray
    alpha_prev: np.ndarray


def attention_step_backward(params: Parameters, grads: Parameters, ctx: EncoderContext,
                            cache: _StepCache, d_logits: np.ndarray, d_next: _StateGrad,
                            d_h: np.ndarray) -> _StateGrad:
    """Backward through one step; adds the encoder-output gradient into ``d_h``."""
    grads["out.W"][...] += np.outer(cache.dec_h, d_logits)
    grads["out.b"][...] += d_logits
    d_dec_h = params["out.W"] @ d_logits + d_next.dec_h
    d_dec_in, d_dec_h_prev, d_dec_c_prev = lstm_cell_backward(
        d_dec_h, d_next.dec_c, cache.dec_cell,
        params["dec.rnn.Wx"], params["dec.rnn.Wh"],
        grads["dec.rnn.Wx"], grads["dec.rnn.Wh"], grads["dec.rnn.b"],
    )
    width = ctx.h.shape[1]
    d_context = d_dec_in[:width]
    d_att_h = d_dec_in[width:] + d_next.att_h

    alpha = cache.alpha
    d_alpha = ctx.h @ d_context + d_next.alpha_prev
    d_h += np.outer(alpha, d_context)
    d_energy = alpha * (d_alpha - alpha @ d_alpha)

    v = params["att.v"]
    grads["att.v"][...] += cache.u.T @ d_energy
    d_z = np.outer(d_energy, v) * (1.0 - cache.u ** 2)
    d_z_sum = d_z.sum(axis=0)
    grads["att.b"][...] += d_z_sum
    grads["att.W"][...] += ctx.h.T @ d_z
    d_h += d_z @ params["att.W"].T
    grads["att.S"][...] += np.outer(cache.att_h, d_z_sum)
    d_att_h = d_att_h + params["att.S"] @ d_z_sum
    grads["att.Q"][...] += cache.loc.T @ d_z
    d_alpha_prev = location_conv_backward(d_z @ params["att.Q"].T, cache.windows, params["att.F"], grads["att.F"])

    d_x, d_att_h_prev, d_att_c_prev = lstm_cell_backward(
        d_att_h, d_next.att_c, cache.att_cell,
        params["att.rnn.Wx"], params["att.rnn.Wh"],
        grads["att.rnn.Wx"], grads["att.rnn.Wh"], grads["att.rnn.b"],
    )
    grads["att.emb"][cache.token] += d_x
    return _StateGrad(d_att_h_prev, d_att_c_prev, d_dec_h_prev, d_dec_c_prev, d_alpha_prev)


def teacher_forced(params: Parameters, spec: ModelSpec, h: np.ndarray, labels: Sequence[int]):
    """Run the decoder on sos + labels. Returns (logits (U+1)x(V+2), alphas, caches, ctx)."""
    ctx = encoder_context(params, h)
    state = initial_state(params, ctx.n_frames)
    inputs = [spec.vocab_size] + list(labels)
    logits = np.zeros((len(inputs), spec.vocab_size + 2))
    alphas = np.zeros((len(inputs), ctx.n_frames))
    caches: List[_StepCache] = []
    for i, token in enumerate(inputs):
        logits[i], state, alphas[i], cache = attention_step(params, ctx, state, token)
        caches.append(cache)
    return logits, alphas, caches, ctx


def teacher_forced_backward(params: Parameters, grads: Parameters, ctx: EncoderContext,
                            caches: List[_StepCache], d_logits: np.ndarray) -> np.ndarray:
    """Gradient with respect to the encoder output ``h``."""
    hidden = params["att.rnn.Wh"].shape[0]
    zeros = np.zeros(hidden)
    d_next = _StateGrad(zeros, zeros, zeros, zeros, np.zeros(ctx.n_frames))
    d_h = np.zeros_like(ctx.h)
    for i in range(len(caches) - 1, -1, -1):
        d_next = attention_step_backward(params, grads, ctx, caches[i], d_logits[i], d_next, d_h)
    return d_h
