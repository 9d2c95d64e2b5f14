"""Keyframe-aware transformer encoder.

Each layer applies residual self-attention, then predicts one
informativeness scalar per clip and scales the clip row by it. The final
layer's scores drive hard top-k keyframe selection at inference. With the
gate switched off the layer falls back to the vanilla attention+FFN
block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation


@dataclass
class EncodedVideo:
    v_enc: ad.Tensor          # (L, d)
    scores: ad.Tensor | None  # (L, 1); None for the vanilla (gate-free) encoder


def attention_block(mp, prefix, q_in, kv_in, heads):
    """Projected multi-head attention; returns (output, mean alpha, per-head)."""
    w = mp.weights
    q = ad.affine(q_in, w[f"{prefix}.wq"], w[f"{prefix}.bq"])
    k = ad.affine(kv_in, w[f"{prefix}.wk"], w[f"{prefix}.bk"])
    v = ad.affine(kv_in, w[f"{prefix}.wv"], w[f"{prefix}.bv"])
    out, alpha, per_head = ad.multi_head_attention(q, k, v, heads)
    return ad.affine(out, w[f"{prefix}.wo"], w[f"{prefix}.bo"]), alpha, per_head


def feed_forward(mp, base, x):
    w = mp.weights
    hidden = ad.relu(ad.affine(x, w[f"{base}.ffn1.w"], w[f"{base}.ffn1.b"]))
    return ad.affine(hidden, w[f"{base}.ffn2.w"], w[f"{base}.ffn2.b"])


def encode(x0, mp, keyframe_gate=None):
    """Encode an (L, d_in) clip sequence into (v_enc, scores).

    Input projection and learned positional rows are applied before the
    first layer. When `keyframe_gate` is false the vanilla encoder layer
    (attention + FFN, no scoring) runs instead and scores are None.
    """
    cfg = mp.cfg
    if keyframe_gate is None:
        keyframe_gate = cfg.keyframe_gate
    x0 = x0 if isinstance(x0, ad.Tensor) else ad.constant(x0)
    length, d_in = x0.data.shape
    if length < 1 or length > cfg.max_clips:
        raise ContractViolation(
            f"encode: clip count {length} outside [1, {cfg.max_clips}]")
    if d_in != cfg.d_in:
        raise ContractViolation(f"encode: feature width {d_in}, expected {cfg.d_in}")
    if not np.all(np.isfinite(x0.data)):
        raise ContractViolation("encode: non-finite clip features")

    w = mp.weights
    x = ad.affine(x0, w["enc.in_proj.w"], w["enc.in_proj.b"])
    x = ad.add(x, ad.embedding_gather(w["enc.pos"], np.arange(length)))
    scores = None
    for i in range(cfg.layers):
        base = f"enc.l{i}"
        attn_out, _, _ = attention_block(mp, f"{base}.attn", x, x, cfg.heads)
        xhat = ad.layer_norm(ad.add(x, attn_out), w[f"{base}.ln1.g"], w[f"{base}.ln1.b"])
        if keyframe_gate:
            scores = ad.sigmoid(ad.affine(xhat, w[f"{base}.score.w"], w[f"{base}.score.b"]))
            x = ad.mul(xhat, scores)
        else:
            x = ad.layer_norm(ad.add(xhat, feed_forward(mp, base, xhat)),
                              w[f"{base}.ln2.g"], w[f"{base}.ln2.b"])
    return EncodedVideo(v_enc=x, scores=scores)


def select_keyframes(scores, delta):
    """Indices of the top-ceil(delta*L) scores, ascending temporal order.

    Ties break toward the lower (earlier) index.
    """
    if not 0.0 < delta <= 1.0:
        raise ContractViolation(f"select_keyframes: delta {delta} outside (0, 1]")
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    length = scores.shape[0]
    if length < 1:
        raise ContractViolation("select_keyframes: empty score vector")
    k = math.ceil(delta * length)
    order = np.argsort(-scores, kind="stable")  # stable => earliest index wins ties
    return sorted(int(i) for i in order[:k])


def uniform_keyframes(length, delta):
    """Uniform-interval baseline selector with the same count as top-k."""
    if not 0.0 < delta <= 1.0:
        raise ContractViolation(f"uniform_keyframes: delta {delta} outside (0, 1]")
    k = math.ceil(delta * length)
    return [int(i * length // k) for i in range(k)]
