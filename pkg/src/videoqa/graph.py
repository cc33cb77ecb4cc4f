"""Location-aware node features and learned-adjacency graph reasoning.

Each detected object becomes one node: appearance projection, an MLP over its
normalized box, and a fixed sinusoid of its frame index, concatenated. The
adjacency is recomputed per layer from the current node features as
row-softmaxed bilinear scores; layers multiply A @ X @ W with no nonlinearity
in between, and the stack closes with a skip connection back to the input.

The relation module is swappable (ablations): 'gcn', per-node 'fc' layers,
a 2-layer 'lstm' over frame-major node order, or 'none' (skip path only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import LstmCell, Mlp, lstm_sequence, mlp_forward, uniform_init
from .rng import Rng
from .tensor import (
    ContractError,
    DimensionError,
    Tensor,
    add,
    concat_last,
    matmul,
    mul,
    reshape,
    softmax_rows,
    transpose,
)


@dataclass
class BBox:
    """Pixel-space box: top-left corner plus extent, with its frame size."""

    x: float
    y: float
    w: float
    h: float
    frame_w: float
    frame_h: float

    def normalized(self) -> np.ndarray:
        if self.frame_w <= 0 or self.frame_h <= 0:
            raise ContractError(f"frame extent must be positive, got {self.frame_w}x{self.frame_h}")
        if self.w <= 0 or self.h <= 0:
            raise ContractError(f"box extent must be positive, got {self.w}x{self.h}")
        return np.array([self.x / self.frame_w, self.y / self.frame_h,
                         self.w / self.frame_w, self.h / self.frame_h])


def normalize_boxes(boxes: np.ndarray, frame_w: float, frame_h: float) -> np.ndarray:
    """Vectorized version of BBox.normalized for a [T, 4] array."""
    if frame_w <= 0 or frame_h <= 0:
        raise ContractError(f"frame extent must be positive, got {frame_w}x{frame_h}")
    return boxes / np.array([frame_w, frame_h, frame_w, frame_h])


def encode_spatial(box: BBox, mlp: Mlp) -> Tensor:
    """Two-layer ReLU MLP over the normalized (x, y, w, h)."""
    v = Tensor(box.normalized()[None, :])
    out = mlp_forward(mlp, v)
    return reshape(out, (out.data.shape[1],))


def encode_spatial_batch(norm_boxes: np.ndarray, mlp: Mlp) -> Tensor:
    return mlp_forward(mlp, Tensor(norm_boxes))


def encode_temporal(n: int, d_p: int) -> np.ndarray:
    """Fixed sinusoid of the frame index: entry 2j = sin(n / 10000^(2j/d_p)),
    entry 2j+1 = cos of the same argument. Not trainable."""
    if d_p % 2 != 0:
        raise ContractError(f"temporal encoding dimension must be even, got {d_p}")
    if n < 0:
        raise ContractError(f"frame index must be nonnegative, got {n}")
    out = np.empty(d_p)
    for j in range(d_p // 2):
        arg = n / (10000.0 ** (2.0 * j / d_p))
        out[2 * j] = math.sin(arg)
        out[2 * j + 1] = math.cos(arg)
    return out


def temporal_matrix(frame_indices, d_p: int) -> np.ndarray:
    """Vectorized encode_temporal over a vector of frame indices."""
    if d_p % 2 != 0:
        raise ContractError(f"temporal encoding dimension must be even, got {d_p}")
    n = np.asarray(frame_indices, dtype=np.float64)[:, None]
    j = np.arange(d_p // 2, dtype=np.float64)[None, :]
    args = n / np.power(10000.0, 2.0 * j / d_p)
    out = np.empty((len(frame_indices), d_p))
    out[:, 0::2] = np.sin(args)
    out[:, 1::2] = np.cos(args)
    return out


def build_node_features(projected: Tensor, spatial: Tensor, temporal: np.ndarray,
                        use_spatial: bool = True, use_temporal: bool = True) -> Tensor:
    """Concatenate [appearance ; spatial ; temporal] per node, frame-major.

    Ablation flags zero a slice rather than dropping it, so every variant
    keeps identical parameter shapes downstream.
    """
    t = projected.data.shape[0]
    if spatial.data.shape[0] != t or temporal.shape[0] != t:
        raise DimensionError(
            f"node feature row mismatch: {projected.data.shape[0]}, "
            f"{spatial.data.shape[0]}, {temporal.shape[0]}"
        )
    if not use_spatial:
        spatial = mul(spatial, 0.0)
    temp = Tensor(temporal if use_temporal else np.zeros_like(temporal))
    return concat_last([projected, spatial, temp])


@dataclass
class GcnParams:
    """Per layer p: transform W [d_v, d_v] and projections W1, W2 [d_v, d_a].

    All layers preserve d_v, which the closing skip connection requires.
    When `shared_projections` is set, W1/W2 of layer 0 are reused everywhere.
    """

    w: list
    w1: list
    w2: list
    shared_projections: bool = False

    @staticmethod
    def create(rng: Rng, d_v: int, depth: int, d_a: int | None = None,
               shared_projections: bool = False) -> "GcnParams":
        if depth < 1:
            raise ContractError("graph depth must be at least 1")
        d_a = d_v if d_a is None else d_a
        n_proj = 1 if shared_projections else depth
        return GcnParams(
            w=[uniform_init(rng, (d_v, d_v), d_v) for _ in range(depth)],
            w1=[uniform_init(rng, (d_v, d_a), d_v) for _ in range(n_proj)],
            w2=[uniform_init(rng, (d_v, d_a), d_v) for _ in range(n_proj)],
            shared_projections=shared_projections,
        )

    def projections(self, layer: int):
        i = 0 if self.shared_projections else layer
        return self.w1[i], self.w2[i]

    def params(self, prefix: str) -> dict:
        out = {}
        for i, w in enumerate(self.w):
            out[f"{prefix}.{i}.w"] = w
        for i, (a, b) in enumerate(zip(self.w1, self.w2)):
            out[f"{prefix}.{i}.w1"] = a
            out[f"{prefix}.{i}.w2"] = b
        return out


def compute_adjacency(x: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """A = softmax_rows((X W1) (X W2)^T): row-stochastic, fully connected."""
    logits = matmul(matmul(x, w1), transpose(matmul(x, w2)))
    return softmax_rows(logits)


def gcn_forward(x0: Tensor, params: GcnParams, depth: int,
                collect_adjacency: list | None = None) -> Tensor:
    """Iterate X^(p) = A^(p) X^(p-1) W^(p), then add the skip from X^(0)."""
    x = x0
    for p in range(depth):
        w1, w2 = params.projections(p)
        a = compute_adjacency(x, w1, w2)
        if collect_adjacency is not None:
            collect_adjacency.append(a.data.copy())
        x = matmul(matmul(a, x), params.w[p])
    return add(x, x0)


# ---------------------------------------------------------------------------
# relation-module ablations


@dataclass
class FcRelation:
    """Per-node linear layers standing in for graph convolution."""

    w: list

    @staticmethod
    def create(rng: Rng, d_v: int, depth: int) -> "FcRelation":
        return FcRelation([uniform_init(rng, (d_v, d_v), d_v) for _ in range(depth)])

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.{i}.w": w for i, w in enumerate(self.w)}


def fc_forward(x0: Tensor, params: FcRelation, depth: int) -> Tensor:
    x = x0
    for p in range(depth):
        x = matmul(x, params.w[p])
    return add(x, x0)


@dataclass
class LstmRelation:
    """Stacked unidirectional LSTM over frame-major node order."""

    cells: list
    d_v: int

    @staticmethod
    def create(rng: Rng, d_v: int, depth: int) -> "LstmRelation":
        return LstmRelation([LstmCell.create(rng, d_v, d_v) for _ in range(depth)], d_v)

    def params(self, prefix: str) -> dict:
        out = {}
        for i, c in enumerate(self.cells):
            out.update(c.params(f"{prefix}.{i}"))
        return out


def lstm_relation_forward(x0: Tensor, params: LstmRelation) -> Tensor:
    t, d_v = x0.data.shape
    x = reshape(x0, (1, t, d_v))
    for cell in params.cells:
        x = lstm_sequence(x, cell, [t])
    return add(reshape(x, (t, d_v)), x0)


def relation_forward(kind: str, x0: Tensor, params, depth: int,
                     collect_adjacency: list | None = None) -> Tensor:
    if kind == "gcn":
        return gcn_forward(x0, params, depth, collect_adjacency)
    if kind == "fc":
        return fc_forward(x0, params, depth)
    if kind == "lstm":
        return lstm_relation_forward(x0, params)
    if kind == "none":
        return x0
    raise ContractError(f"unknown relation kind '{kind}'")
