"""Inference-time evaluation: hard keyframe selection, decoding, metrics, timing.

Selection happens before decoding: the encoder's final-layer scores pick
the top ceil(delta*L) clips (or the uniform-interval baseline picks the
same count), and the decoder runs over those rows only. Time per video
(TPV) measures the decode loop.
"""

from __future__ import annotations

import time

import numpy as np

from . import autodiff as ad
from . import memory as mem
from .encoder import encode, select_keyframes, uniform_keyframes
from .errors import ContractViolation
from .metrics import EvaluationReport, bleu4, div_n, rep_n, CiderScorer


def choose_indices(enc, delta, selector, length):
    if delta >= 1.0:
        return list(range(length))
    if selector == "uniform" or enc.scores is None:
        return uniform_keyframes(length, delta)
    return select_keyframes(enc.scores.data, delta)


def decode_video(mp, features, vocab, delta=1.0, selector="learned", repeats=1):
    """Greedy decode with hard selection; returns (tokens, trace, info).

    info carries the selected indices and the best-of-`repeats` decode
    time in seconds (repeats only stabilize the timing; the tokens are
    identical across repeats by determinism).
    """
    if not 0.0 < delta <= 1.0:
        raise ContractViolation(f"decode_video: delta {delta} outside (0, 1]")
    enc = encode(features, mp)
    indices = choose_indices(enc, delta, selector, features.shape[0])
    v_sel = ad.constant(enc.v_enc.data[indices])
    best = None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        tokens, trace = mem.generate_paragraph(
            v_sel, mp, vocab.bos_id, vocab.eos_id, mp.cfg.max_steps, mode="greedy")
        elapsed = time.perf_counter() - t0
        best = elapsed if best is None else min(best, elapsed)
    return tokens, trace, {"indices": indices, "seconds": best,
                           "scores": None if enc.scores is None
                           else enc.scores.data.reshape(-1).copy()}


def evaluate_split(mp, records, vocab, corpus_reference_sets, delta=1.0,
                   selector="learned", repeats=1):
    """Greedy-decode a split and score it; returns (report, per-video infos)."""
    scorer = CiderScorer(corpus_reference_sets)
    report = EvaluationReport()
    infos = {}
    total_seconds = 0.0
    for rec in records:
        tokens, trace, info = decode_video(mp, rec.features, vocab, delta,
                                           selector, repeats)
        infos[rec.video_id] = info
        total_seconds += info["seconds"]
        report.video_ids.append(rec.video_id)
        report.rows.append({
            "bleu4": bleu4(tokens, rec.refs) if tokens else 0.0,
            "cider": scorer.score(tokens, rec.refs) if tokens else 0.0,
            "div1": div_n(tokens, 1),
            "div2": div_n(tokens, 2),
            "rep4": rep_n(tokens, 4),
            "length": float(len(tokens)),
        })
    report.finalize()
    report.time_per_video_ms = 1000.0 * total_seconds / max(1, len(records))
    return report, infos


def delta_sweep(mp, records, vocab, corpus_reference_sets, deltas,
                selectors=("learned",), repeats=1):
    """Rows of (delta, selector, cider, rep4, tpv_ms) over the sweep grid."""
    rows = []
    for delta in deltas:
        for selector in selectors:
            report, _ = evaluate_split(mp, records, vocab, corpus_reference_sets,
                                       delta, selector, repeats)
            rows.append({"delta": delta, "selector": selector,
                         "cider": report.means["cider"],
                         "rep4": report.means["rep4"],
                         "tpv_ms": report.time_per_video_ms})
    return rows


def sweep_table(rows):
    lines = ["delta\tselector\tcider\trep4\ttpv_ms"]
    for r in rows:
        rep4 = "NA" if r["rep4"] is None else f"{r['rep4']:.6f}"
        lines.append(f"{r['delta']:.2f}\t{r['selector']}\t{r['cider']:.6f}"
                     f"\t{rep4}\t{r['tpv_ms']:.3f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# trace inspection (attention visualization data)
# ---------------------------------------------------------------------------

def inspect_video(mp, record, vocab, delta=1.0, selector="learned"):
    """Plot-ready tables for one video's decode trace.

    Returns a dict of file-stem -> TSV text: the step table, the alpha
    heatmap (steps x selected clips), the exposure curves, the keyframe
    score bars and the attention centroid per step.
    """
    tokens, trace, info = decode_video(mp, record.features, vocab, delta, selector)
    words = vocab.decode(tokens)
    out = {}

    hdr = ["step", "token_id", "token", "g_add", "g_erase", "mean_u"]
    hdr += [f"alpha_{i}" for i in range(len(info["indices"]))]
    lines = ["\t".join(hdr)]
    for t, row in enumerate(trace.to_rows()):
        word = vocab.tokens[trace.tokens[t]]
        cells = [str(row[0]), str(row[1]), word] + [f"{v:.6f}" for v in row[2:]]
        lines.append("\t".join(cells))
    out["trace"] = "\n".join(lines) + "\n"

    mat = trace.alpha_matrix()
    out["alpha_heatmap"] = "\n".join(
        "\t".join(f"{v:.9f}" for v in row) for row in mat) + "\n"

    lines = ["step\tmean_u"]
    lines += [f"{t}\t{u:.9f}" for t, u in enumerate(trace.mean_exposure)]
    out["exposure"] = "\n".join(lines) + "\n"

    if info["scores"] is not None:
        lines = ["clip\tscore\tselected"]
        sel = set(info["indices"])
        for i, s in enumerate(info["scores"]):
            lines.append(f"{i}\t{s:.9f}\t{int(i in sel)}")
        out["scores"] = "\n".join(lines) + "\n"

    cents = trace.centroids()
    lines = ["step\tcentroid"]
    lines += [f"{t}\t{c:.9f}" for t, c in enumerate(cents)]
    out["centroid"] = "\n".join(lines) + "\n"

    out["paragraph"] = " ".join(words) + "\n"
    return out
