"""Numpy building blocks with hand-written backward passes.

Every forward function returns its output together with a cache; the
matching backward function takes the upstream gradient and the cache,
adds parameter gradients into the arrays it is handed (views of a gradient
``Parameters``) and returns the gradient of its input.

LSTM gate order is input, forget, output, candidate.
"""

import math
import os
import sys
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from utils.errors import ShapeMismatchError
from utils.numerics import SeededRng


class Parameters:
    """Flat float64 vector plus a layout of named, shaped views into it."""

    def __init__(self, layout: Sequence[Tuple[str, Tuple[int, ...]]], vector: Optional[np.ndarray] = None):
        self.layout: Dict[str, Tuple[int, Tuple[int, ...]]] = {}
        offset = 0
        for name, shape in layout:
            if name in self.layout:
                raise ValueError(f"duplicate parameter name {name}")
            shape = tuple(int(d) for d in shape)
            self.layout[name] = (offset, shape)
            offset += int(np.prod(shape)) if shape else 1
        if vector is None:
            vector = np.zeros(offset, dtype=np.float64)
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (offset,):
            raise ShapeMismatchError(f"layout needs {offset} values, vector has {vector.size}")
        self.vector = vector

    @property
    def size(self) -> int:
        return self.vector.size

    def names(self) -> List[str]:
        return list(self.layout)

    def shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(name, shape) for name, (_, shape) in self.layout.items()]

    def __contains__(self, name: str) -> bool:
        return name in self.layout

    def __getitem__(self, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        count = int(np.prod(shape)) if shape else 1
        return self.vector[offset:offset + count].reshape(shape)

    def zeros_like(self) -> "Parameters":
        return Parameters(self.shapes())

    def copy(self) -> "Parameters":
        return Parameters(self.shapes(), self.vector.copy())


def init_uniform(params: Parameters, fan_in: Dict[str, int], rng: SeededRng) -> Parameters:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor, in layout order."""
    for name in params.names():
        bound = 1.0 / math.sqrt(max(fan_in.get(name, 1), 1))
        view = params[name]
        view[...] = rng.uniform(-bound, bound, size=view.shape)
    return params


# ---------------------------------------------------------------------------
# Dense and downsample
# ---------------------------------------------------------------------------

def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    return x @ W + b, x


def dense_backward(dy: np.ndarray, x: np.ndarray, W: np.ndarray, dW: np.ndarray, db: np.ndarray) -> np.ndarray:
    dW += x.T @ dy
    db += dy.sum(axis=0)
    return dy @ W.T


def stack_frames(x: np.ndarray, factor: int) -> np.ndarray:
    """Concatenate ``factor`` consecutive rows; the tail is zero padded."""
    n_frames, width = x.shape
    out_frames = -(-n_frames // factor)
    padded = np.zeros((out_frames * factor, width))
    padded[:n_frames] = x
    return padded.reshape(out_frames, factor * width)


def unstack_frames(d_stacked: np.ndarray, factor: int, n_frames: int) -> np.ndarray:
    width = d_stacked.shape[1] // factor
    return d_stacked.reshape(-1, width)[:n_frames]


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

@dataclass
class LSTMCellCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray


def lstm_cell_forward(x, h_prev, c_prev, Wx, Wh, b):
    z = x @ Wx + h_prev @ Wh + b
    size = h_prev.shape[-1]
    i = expit(z[:size])
    f = expit(z[size:2 * size])
    o = expit(z[2 * size:3 * size])
    g = np.tanh(z[3 * size:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c, LSTMCellCache(x, h_prev, c_prev, i, f, o, g, c)


def lstm_cell_backward(dh, dc, cache: LSTMCellCache, Wx, Wh, dWx, dWh, db):
    """Returns (dx, dh_prev, dc_prev) and accumulates weight gradients."""
    tanh_c = np.tanh(cache.c)
    d_o = dh * tanh_c
    dc_total = dc + dh * cache.o * (1.0 - tanh_c ** 2)
    d_i = dc_total * cache.g
    d_g = dc_total * cache.i
    d_f = dc_total * cache.c_prev
    dc_prev = dc_total * cache.f
    dz = np.concatenate([
        d_i * cache.i * (1.0 - cache.i),
        d_f * cache.f * (1.0 - cache.f),
        d_o * cache.o * (1.0 - cache.o),
        d_g * (1.0 - cache.g ** 2),
    ])
    dWx += np.outer(cache.x, dz)
    dWh += np.outer(cache.h_prev, dz)
    db += dz
    return Wx @ dz, Wh @ dz, dc_prev


def lstm_forward(x: np.ndarray, Wx, Wh, b, h0=None, c0=None):
    """Run a forward-direction LSTM over the rows of ``x``."""
    size = Wh.shape[0]
    h = np.zeros(size) if h0 is None else h0
    c = np.zeros(size) if c0 is None else c0
    outputs = np.zeros((x.shape[0], size))
    caches: List[LSTMCellCache] = []
    for t in range(x.shape[0]):
        h, c, cache = lstm_cell_forward(x[t], h, c, Wx, Wh, b)
        outputs[t] = h
        caches.append(cache)
    return outputs, caches


def lstm_backward(d_out: np.ndarray, caches: List[LSTMCellCache], Wx, Wh, dWx, dWh, db) -> np.ndarray:
    size = Wh.shape[0]
    dx = np.zeros((len(caches), Wx.shape[0]))
    dh_next = np.zeros(size)
    dc_next = np.zeros(size)
    for t in range(len(caches) - 1, -1, -1):
        dx[t], dh_next, dc_next = lstm_cell_backward(d_out[t] + dh_next, dc_next, caches[t], Wx, Wh, dWx, dWh, db)
    return dx


# ---------------------------------------------------------------------------
# Location convolution
# ---------------------------------------------------------------------------

def location_conv_forward(alpha_prev: np.ndarray, filters: np.ndarray):
    """'same' 1-D convolution of the previous alignment: (T',) -> (T', C)."""
    width = filters.shape[1]
    pad = width // 2
    padded = np.concatenate([np.zeros(pad), alpha_prev, np.zeros(pad)])
    windows = np.lib.stride_tricks.sliding_window_view(padded, width)
    return windows @ filters.T, windows


def location_conv_backward(d_loc: np.ndarray, windows: np.ndarray, filters: np.ndarray, d_filters: np.ndarray) -> np.ndarray:
    width = filters.shape[1]
    pad = width // 2
    n_frames = d_loc.shape[0]
    d_filters += d_loc.T @ windows
    d_windows = d_loc @ filters
    d_padded = np.zeros(n_frames + 2 * pad)
    for j in range(width):
        d_padded[j:j + n_frames] += d_windows[:, j]
    return d_padded[pad:pad + n_frames]
