"""Visual feature assembly, visual-question interaction, and answer heads.

The interaction attends each visual row over the question words (dot-product
scores, pad columns pushed to -1e9 before the row softmax), builds the fused
block layout [F_v | Fq~ | F_v*Fq~] (plus the answer-attended blocks for
multiple choice), then a Bi-LSTM over the object axis and a max-pool yield
the final vector for the task head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import BiLstm, Conv1d, LinearLayer, Mlp, bilstm_forward_batch, conv1d_forward, linear_forward, mlp_forward
from .tensor import (
    ContractError,
    DimensionError,
    Tensor,
    add,
    concat_last,
    cross_entropy_logits,
    elu,
    gather_rows,
    matmul,
    mul,
    reduce,
    reshape,
    softmax_rows,
    stack_first,
    sub,
    transpose,
)

MASK_LOGIT = -1e9


def project_objects(raw: Tensor, proj: LinearLayer) -> Tensor:
    """FC + ELU reduction of pre-extracted object features, [T, d_r] -> [T, d_o]."""
    return elu(linear_forward(proj, raw))


def global_context(frame_feats: Tensor, conv: Conv1d, proj: LinearLayer, k: int) -> Tensor:
    """Frame context: FC+ELU projection, 1-D conv over frames + ELU to merge
    neighbor information, then each frame vector replicated K times so rows
    align with the frame-major object nodes. [N, d_f] -> [N*K, d_g]."""
    if frame_feats.data.shape[0] < 1:
        raise DimensionError("global_context needs at least one frame")
    g = elu(linear_forward(proj, frame_feats))
    g = elu(conv1d_forward(conv, g))
    n = g.data.shape[0]
    idx = np.repeat(np.arange(n), k)
    return gather_rows(g, idx)


def fuse_visual(f_r: Tensor, g: Tensor, mlp: Mlp) -> Tensor:
    """F_v = MLP([F_r , G]) with ELU hidden activation, rows stay aligned."""
    if f_r.data.shape[0] != g.data.shape[0]:
        raise DimensionError(
            f"fuse_visual row mismatch: {f_r.data.shape[0]} vs {g.data.shape[0]}"
        )
    return mlp_forward(mlp, concat_last([f_r, g]))


def _mask_bias(mask: np.ndarray, rows: int) -> Tensor:
    bias = np.zeros((rows, mask.shape[0]))
    bias[:, ~mask] = MASK_LOGIT
    return Tensor(bias)


def attend(f_v: Tensor, f_q: Tensor, mask: np.ndarray) -> tuple:
    """S = softmax_rows(F_v F_q^T) with pad columns masked; returns (S, S F_q)."""
    if not mask.any():
        raise ContractError("attention over an all-pad sequence")
    scores = matmul(f_v, transpose(f_q))
    s = softmax_rows(add(scores, _mask_bias(mask, f_v.data.shape[0])))
    return s, matmul(s, f_q)


def vq_interact(f_v: Tensor, f_q: Tensor, mask: np.ndarray, out_rnn: BiLstm,
                answers: list | None = None) -> Tensor:
    """Fused cross-modal vector(s).

    f_v and f_q must already live in the shared d_s subspace. Without answers:
    one [d_out] vector from the 3-block layout. With answers (list of
    (features, mask) pairs, one per option): [U, d_out], the 5-block layout
    [F_v | Fq~ | Fa~ | F_v*Fq~ | F_v*Fa~] per option, sharing the output LSTM.
    """
    _, fq_tilde = attend(f_v, f_q, mask)
    vq = mul(f_v, fq_tilde)
    if answers is None:
        fc = concat_last([f_v, fq_tilde, vq])
        t, width = fc.data.shape
        seq = bilstm_forward_batch(out_rnn, reshape(fc, (1, t, width)), [t])
        pooled = reduce(reshape(seq, (t, 2 * out_rnn.hidden)), "max", axis=0)
        return pooled
    rows = []
    for f_a, a_mask in answers:
        _, fa_tilde = attend(f_v, f_a, a_mask)
        rows.append(concat_last([f_v, fq_tilde, fa_tilde, vq, mul(f_v, fa_tilde)]))
    stacked = stack_first(rows)  # [U, T, 5*d_s]
    t = stacked.data.shape[1]
    seq = bilstm_forward_batch(out_rnn, stacked, [t] * len(rows))
    return reduce(seq, "max", axis=1)  # [U, d_out]


def mc_score(fused_options: Tensor, head: LinearLayer) -> Tensor:
    """One shared FC scalar per option: [U, d_out] -> [U]."""
    if fused_options.data.shape[0] < 2:
        raise ContractError("multiple choice needs at least two options")
    scores = linear_forward(head, fused_options)
    return reshape(scores, (scores.data.shape[0],))


def mc_loss(scores: Tensor, correct: int) -> Tensor:
    """Cross entropy over option scores: -log softmax(scores)[correct]."""
    return cross_entropy_logits(scores, correct)


def open_ended_scores(fused: Tensor, head: LinearLayer) -> Tensor:
    """[d_out] -> scores over the answer set; argmax is the prediction."""
    out = linear_forward(head, reshape(fused, (1, fused.data.shape[0])))
    return reshape(out, (out.data.shape[1],))


def open_ended_loss(scores: Tensor, label: int) -> Tensor:
    return cross_entropy_logits(scores, label)


def count_value(fused: Tensor, head: LinearLayer) -> Tensor:
    """Raw unbounded count prediction (scalar tensor)."""
    out = linear_forward(head, reshape(fused, (1, fused.data.shape[0])))
    return reshape(out, ())


def count_loss(x: Tensor, y: float) -> Tensor:
    """Squared error (x - y)^2 against a label in 0..10."""
    if not (0 <= y <= 10):
        raise ContractError(f"count label {y} outside 0..10")
    d = sub(x, float(y))
    return mul(d, d)


def count_postprocess(x: float) -> int:
    """Round half away from zero, then clamp into 0..10."""
    if not np.isfinite(x):
        raise ContractError(f"count prediction is not finite: {x}")
    rounded = int(np.floor(x + 0.5)) if x >= 0 else -int(np.floor(-x + 0.5))
    return max(0, min(10, rounded))
