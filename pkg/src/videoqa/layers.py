"""Parameterized layers composed over the tensor engine.

The LSTM recurrence runs as one fused tape op (numpy forward, hand-written
backprop-through-time) so a training step records a handful of entries
instead of hundreds; its gradient is pinned down by the finite-difference
checker and a hand-unrolled oracle in the tests.

Initialization scheme (the paper is silent): weights uniform in +-1/sqrt(fan_in),
biases zero except LSTM forget gates at 1.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .tensor import (
    DimensionError,
    Tensor,
    _record,
    add,
    add_rowvec,
    concat_last,
    conv1d_same,
    conv2d_valid,
    elu,
    gather_rows,
    matmul,
    mul,
    reduce,
    relu,
    sigmoid,
    sub,
)


def uniform_init(rng: Rng, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(max(1, fan_in))
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


# ---------------------------------------------------------------------------
# linear / MLP / highway


@dataclass
class LinearLayer:
    weight: Tensor  # [in, out]
    bias: Tensor    # [out]

    @staticmethod
    def create(rng: Rng, d_in: int, d_out: int) -> "LinearLayer":
        return LinearLayer(
            weight=uniform_init(rng, (d_in, d_out), d_in),
            bias=Tensor(np.zeros(d_out), requires_grad=True),
        )

    def params(self, prefix: str) -> dict:
        return {prefix + ".w": self.weight, prefix + ".b": self.bias}


def linear_forward(layer: LinearLayer, x: Tensor) -> Tensor:
    return add_rowvec(matmul(x, layer.weight), layer.bias)


@dataclass
class Mlp:
    """Two linear layers with a ReLU or ELU in between."""

    lin1: LinearLayer
    lin2: LinearLayer
    activation: str = "relu"

    @staticmethod
    def create(rng: Rng, d_in: int, d_hidden: int, d_out: int, activation: str = "relu") -> "Mlp":
        if d_hidden <= 0:
            raise DimensionError("Mlp hidden dimension must be positive")
        return Mlp(LinearLayer.create(rng, d_in, d_hidden),
                   LinearLayer.create(rng, d_hidden, d_out), activation)

    def params(self, prefix: str) -> dict:
        out = self.lin1.params(prefix + ".l1")
        out.update(self.lin2.params(prefix + ".l2"))
        return out


def mlp_forward(mlp: Mlp, x: Tensor) -> Tensor:
    h = linear_forward(mlp.lin1, x)
    h = relu(h) if mlp.activation == "relu" else elu(h)
    return linear_forward(mlp.lin2, h)


@dataclass
class HighwayNetwork:
    """Gated residual stack; input and output widths are equal by construction."""

    layers: list  # [(w_transform, b_transform, w_gate, b_gate), ...]

    @staticmethod
    def create(rng: Rng, dim: int, depth: int = 2) -> "HighwayNetwork":
        layers = []
        for _ in range(depth):
            layers.append((
                uniform_init(rng, (dim, dim), dim),
                Tensor(np.zeros(dim), requires_grad=True),
                uniform_init(rng, (dim, dim), dim),
                Tensor(np.zeros(dim), requires_grad=True),
            ))
        return HighwayNetwork(layers)

    def params(self, prefix: str) -> dict:
        out = {}
        for i, (wt, bt, wg, bg) in enumerate(self.layers):
            out[f"{prefix}.{i}.wt"] = wt
            out[f"{prefix}.{i}.bt"] = bt
            out[f"{prefix}.{i}.wg"] = wg
            out[f"{prefix}.{i}.bg"] = bg
        return out


def highway_forward(hw: HighwayNetwork, x: Tensor) -> Tensor:
    """Per layer: y = g * ReLU(W_t x + b_t) + (1 - g) * x, g = sigmoid(W_g x + b_g)."""
    for wt, bt, wg, bg in hw.layers:
        if x.data.shape[-1] != wt.data.shape[0]:
            raise DimensionError(f"highway dim {wt.data.shape[0]} vs input {x.data.shape}")
        t = relu(add_rowvec(matmul(x, wt), bt))
        g = sigmoid(add_rowvec(matmul(x, wg), bg))
        carry = mul(sub(Tensor(np.ones_like(g.data)), g), x)
        x = add(mul(g, t), carry)
    return x


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingTable:
    rows: Tensor  # [vocab, dim]
    pad_id: int = 0
    unk_id: int = 1

    @staticmethod
    def create(rng: Rng, vocab: int, dim: int, trainable: bool = True) -> "EmbeddingTable":
        data = rng.uniform(-1.0 / math.sqrt(dim), 1.0 / math.sqrt(dim), (vocab, dim))
        data[0] = 0.0  # pad row stays zero
        return EmbeddingTable(Tensor(data, requires_grad=trainable))

    def params(self, prefix: str) -> dict:
        return {prefix: self.rows}


def embedding_lookup(table: EmbeddingTable, ids) -> Tensor:
    """Row gather; the pad row never receives gradient."""
    return gather_rows(table.rows, ids, frozen_rows=(table.pad_id,))


# ---------------------------------------------------------------------------
# convolutions


@dataclass
class Conv1d:
    kernels: Tensor  # [out, in, k]
    bias: Tensor

    @staticmethod
    def create(rng: Rng, c_in: int, c_out: int, width: int) -> "Conv1d":
        return Conv1d(
            kernels=uniform_init(rng, (c_out, c_in, width), c_in * width),
            bias=Tensor(np.zeros(c_out), requires_grad=True),
        )

    def params(self, prefix: str) -> dict:
        return {prefix + ".k": self.kernels, prefix + ".b": self.bias}


def conv1d_forward(conv: Conv1d, seq: Tensor) -> Tensor:
    return conv1d_same(seq, conv.kernels, conv.bias)


@dataclass
class Conv2d:
    kernels: Tensor  # [out, in, kh, kw]
    bias: Tensor

    @staticmethod
    def create(rng: Rng, c_in: int, c_out: int, kh: int, kw: int) -> "Conv2d":
        return Conv2d(
            kernels=uniform_init(rng, (c_out, c_in, kh, kw), c_in * kh * kw),
            bias=Tensor(np.zeros(c_out), requires_grad=True),
        )

    def params(self, prefix: str) -> dict:
        return {prefix + ".k": self.kernels, prefix + ".b": self.bias}


def char_cnn(conv: Conv2d, char_emb: Tensor) -> Tensor:
    """Character pipeline: convolve over the char axis, ReLU, max over positions.

    char_emb: [words, chars, d_c] -> [words, n_kernels].
    """
    y = conv2d_valid(char_emb, conv.kernels, conv.bias)
    return reduce(relu(y), "max", axis=1)


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmCell:
    wx: Tensor  # [d_in, 4h], gate order i|f|g|o
    wh: Tensor  # [h, 4h]
    b: Tensor   # [4h], forget slice initialized to 1.0

    @staticmethod
    def create(rng: Rng, d_in: int, hidden: int) -> "LstmCell":
        bound = 1.0 / math.sqrt(hidden)
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0
        return LstmCell(
            wx=Tensor(rng.uniform(-bound, bound, (d_in, 4 * hidden)), requires_grad=True),
            wh=Tensor(rng.uniform(-bound, bound, (hidden, 4 * hidden)), requires_grad=True),
            b=Tensor(b, requires_grad=True),
        )

    def params(self, prefix: str) -> dict:
        return {prefix + ".wx": self.wx, prefix + ".wh": self.wh, prefix + ".b": self.b}


def lstm_sequence(x: Tensor, cell: LstmCell, lengths, reverse: bool = False) -> Tensor:
    """Fused LSTM over a batch of sequences.

    x: [B, L, d_in]; lengths: per-sample valid step counts. Steps at or past a
    sample's length emit exact zeros and contribute no gradient. reverse=True
    scans right-to-left (output still indexed by original position).
    """
    if x.data.ndim != 3:
        raise DimensionError(f"lstm_sequence expects [B,L,d], got {x.data.shape}")
    bsz, length, d_in = x.data.shape
    hidden = cell.wh.data.shape[0]
    if cell.wx.data.shape != (d_in, 4 * hidden):
        raise DimensionError(
            f"lstm wx {cell.wx.data.shape} incompatible with input width {d_in}"
        )
    lengths = np.asarray(lengths, dtype=np.int64).reshape(bsz)
    if lengths.max() > length:
        raise DimensionError(f"length {lengths.max()} exceeds sequence extent {length}")

    wx, wh, b = cell.wx.data, cell.wh.data, cell.b.data
    h = np.zeros((bsz, hidden))
    c = np.zeros((bsz, hidden))
    out = np.zeros((bsz, length, hidden))
    # project all inputs through wx in one matmul; the step loop only handles
    # the recurrent half
    xw = (x.data.reshape(bsz * length, d_in) @ wx).reshape(bsz, length, 4 * hidden)
    full = bool(np.all(lengths == length))
    saved = []
    order = range(length - 1, -1, -1) if reverse else range(length)
    for idx in order:
        z = xw[:, idx, :] + h @ wh + b
        i = 1.0 / (1.0 + np.exp(-z[:, :hidden]))
        f = 1.0 / (1.0 + np.exp(-z[:, hidden : 2 * hidden]))
        g = np.tanh(z[:, 2 * hidden : 3 * hidden])
        o = 1.0 / (1.0 + np.exp(-z[:, 3 * hidden :]))
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        if full:
            saved.append((idx, None, h, c, i, f, g, o, tc))
            c = c_new
            h = h_new
            out[:, idx, :] = h_new
        else:
            m = (lengths > idx).astype(np.float64)[:, None]
            saved.append((idx, m, h, c, i, f, g, o, tc))
            c = m * c_new + (1.0 - m) * c
            h = m * h_new + (1.0 - m) * h
            out[:, idx, :] = m * h_new

    result = Tensor(out)

    def backward_fn(grad_out):
        dh = np.zeros((bsz, hidden))
        dc = np.zeros((bsz, hidden))
        dz_all = np.empty((bsz, length, 4 * hidden))
        dwh = np.zeros_like(wh)
        for idx, m, h_prev, c_prev, i, f, g, o, tc in reversed(saved):
            if m is None:
                dh_new = dh + grad_out[:, idx, :]
                dc_new = dc + dh_new * o * (1.0 - tc * tc)
            else:
                dh_new = m * (dh + grad_out[:, idx, :])
                dc_new = m * dc + dh_new * o * (1.0 - tc * tc)
            dz = dz_all[:, idx, :]
            dz[:, :hidden] = dc_new * g * i * (1.0 - i)
            dz[:, hidden : 2 * hidden] = dc_new * c_prev * f * (1.0 - f)
            dz[:, 2 * hidden : 3 * hidden] = dc_new * i * (1.0 - g * g)
            dz[:, 3 * hidden :] = dh_new * tc * o * (1.0 - o)
            dwh += h_prev.T @ dz
            if m is None:
                dh = dz @ wh.T
                dc = dc_new * f
            else:
                dh = (1.0 - m) * dh + dz @ wh.T
                dc = (1.0 - m) * dc + dc_new * f
        dz_flat = dz_all.reshape(bsz * length, 4 * hidden)
        dx = (dz_flat @ wx.T).reshape(bsz, length, d_in)
        dwx = x.data.reshape(bsz * length, d_in).T @ dz_flat
        db = dz_flat.sum(axis=0)
        return dx, dwx, dwh, db

    return _record("lstm_sequence", (x, cell.wx, cell.wh, cell.b), result, backward_fn)


@dataclass
class BiLstm:
    fwd: LstmCell
    bwd: LstmCell
    hidden: int

    @staticmethod
    def create(rng: Rng, d_in: int, hidden: int) -> "BiLstm":
        return BiLstm(LstmCell.create(rng, d_in, hidden),
                      LstmCell.create(rng, d_in, hidden), hidden)

    def params(self, prefix: str) -> dict:
        out = self.fwd.params(prefix + ".fwd")
        out.update(self.bwd.params(prefix + ".bwd"))
        return out


def bilstm_forward(rnn: BiLstm, seq: Tensor, length: int) -> Tensor:
    """One sequence [L, d] -> [L, 2h]; rows at/past `length` are exact zeros."""
    from .tensor import reshape

    L, d = seq.data.shape
    x3 = reshape(seq, (1, L, d))
    f = lstm_sequence(x3, rnn.fwd, [length], reverse=False)
    bwd = lstm_sequence(x3, rnn.bwd, [length], reverse=True)
    both = concat_last([f, bwd])
    return reshape(both, (L, 2 * rnn.hidden))


def bilstm_forward_batch(rnn: BiLstm, x: Tensor, lengths) -> Tensor:
    """Batched variant: [B, L, d] -> [B, L, 2h]."""
    f = lstm_sequence(x, rnn.fwd, lengths, reverse=False)
    bwd = lstm_sequence(x, rnn.bwd, lengths, reverse=True)
    return concat_last([f, bwd])
