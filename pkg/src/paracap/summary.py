"""Visual-semantic joint embedding and the keyframe auxiliary losses.

A video GRU and a text GRU are pretrained with a hard-negative triplet
retrieval loss so that videos and their paragraphs land close in a joint
space. The video GRU is then frozen and reused: the reconstruction loss
compares its final state on the soft-masked clip sequence against the
raw sequence, and the sparsity loss pins the mean keyframe score to the
selection ratio.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation


def gru_final_state(x, gru_weights, hidden_size):
    """Run the GRU over the rows of x (L, d_in); returns the last hidden (1, d_h)."""
    length = x.data.shape[0]
    if length < 1:
        raise ContractViolation("gru_final_state: empty sequence")
    h = ad.constant(np.zeros((1, hidden_size)))
    for i in range(length):
        h = ad.gru_cell_step(ad.slice_(x, i, i + 1), h, gru_weights)
    return h


def summarize_video(x, mp):
    """Joint-space embedding of a clip sequence (unit norm)."""
    x = x if isinstance(x, ad.Tensor) else ad.constant(x)
    h = gru_final_state(x, mp.gru_weights("sum.v"), mp.cfg.joint_dim)
    w = mp.weights
    return ad.l2_normalize(ad.affine(h, w["sum.v.proj.w"], w["sum.v.proj.b"]))


def summarize_text(token_ids, mp):
    """Joint-space embedding of a token paragraph (unit norm)."""
    if len(token_ids) == 0:
        raise ContractViolation("summarize_text: empty paragraph")
    w = mp.weights
    rows = ad.embedding_gather(w["sum.t.embed"], np.asarray(token_ids))
    h = gru_final_state(rows, mp.gru_weights("sum.t"), mp.cfg.joint_dim)
    return ad.l2_normalize(ad.affine(h, w["sum.t.proj.w"], w["sum.t.proj.b"]))


def triplet_retrieval_loss(video_embs, text_embs, margin):
    """Max-violation triplet loss over in-batch hardest negatives.

    Both directions contribute per pair:
    [margin - s(v,t) + s(v,t-)]_+ and [margin - s(v,t) + s(v-,t)]_+
    with s = cosine similarity (embeddings are already unit norm).
    """
    if len(video_embs) != len(text_embs) or len(video_embs) < 2:
        raise ContractViolation("triplet_retrieval_loss: need >= 2 aligned pairs")
    v = ad.concat_rows(list(video_embs))
    t = ad.concat_rows(list(text_embs))
    sim = ad.matmul(v, ad.transpose(t))             # (B, B)
    b = sim.data.shape[0]
    diag = np.arange(b)
    pos = ad.gather_last(sim, diag)                 # (B, 1)

    masked = sim.data.copy()
    masked[diag, diag] = -np.inf
    hardest_text = masked.argmax(axis=1)            # per video: worst text
    hardest_video = masked.argmax(axis=0)           # per text: worst video

    neg_vt = ad.gather_last(sim, hardest_text)
    neg_tv = ad.gather_last(ad.transpose(sim), hardest_video)
    hinge_vt = ad.relu(ad.affine_const(ad.sub(neg_vt, pos), 1.0, margin))
    hinge_tv = ad.relu(ad.affine_const(ad.sub(neg_tv, pos), 1.0, margin))
    return ad.sum_(ad.add(hinge_vt, hinge_tv))


def raw_video_state(x, mp):
    """Unmasked GRU final state; constant per video once the GRU is frozen."""
    x = x if isinstance(x, ad.Tensor) else ad.constant(x)
    return gru_final_state(x, mp.gru_weights("sum.v"), mp.cfg.joint_dim)


def reconstruction_loss(x0, scores, mp, raw_state=None):
    """Distance between video-GRU states of the soft-masked and raw sequences.

    Taken on the pre-normalization recurrent outputs. Requires the frozen
    summarizer (gradients reach only the scores / encoder side).
    """
    if not mp.frozen_summarizer:
        raise ContractViolation("reconstruction_loss: summarizer must be frozen")
    x0 = x0 if isinstance(x0, ad.Tensor) else ad.constant(x0)
    if scores.data.shape != (x0.data.shape[0], 1):
        raise ContractViolation(
            f"reconstruction_loss: scores {scores.data.shape} vs {x0.data.shape} clips")
    masked = ad.mul(x0, scores)
    h_key = gru_final_state(masked, mp.gru_weights("sum.v"), mp.cfg.joint_dim)
    if raw_state is None:
        raw_state = raw_video_state(x0, mp)
    return ad.l2_distance(h_key, raw_state)


def sparsity_loss(scores, delta):
    """|mean(scores) - delta|, pinning the soft selection rate."""
    if np.any(scores.data <= 0.0) or np.any(scores.data >= 1.0):
        raise ContractViolation("sparsity_loss: scores must lie strictly in (0, 1)")
    return ad.abs_(ad.affine_const(ad.mean(scores), 1.0, -float(delta)))
