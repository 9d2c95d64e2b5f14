"""Caption quality and diversity metrics.

Accuracy: BLEU@4 and plain CIDEr (tf-idf cosine, no CIDEr-D length
penalty). Diversity: Div@n (unique n-grams over total words) and Rep@n
(n-gram occurrences beyond the first over total n-grams). All functions
are pure; token sequences are lists of hashables (ids or strings).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation


def ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


# ---------------------------------------------------------------------------
# BLEU@4
# ---------------------------------------------------------------------------

PRECISION_FLOOR = 1e-9


def bleu4(candidate, references):
    """Geometric mean of clipped 1-4-gram precisions times brevity penalty.

    Zero precisions are floored at 1e-9 instead of using additive smoothing.
    """
    if not candidate:
        raise ContractViolation("bleu4: empty candidate")
    if not references or any(not r for r in references):
        raise ContractViolation("bleu4: empty reference")
    log_sa = 0.0
    for n in range(1, 5):
        cand = Counter(ngrams(candidate, n))
        total = max(sum(cand.values()), 1)
        clipped = 0
        for gram, count in cand.items():
            best = max(ref_count.get(gram, 0) for ref_count in
                       (Counter(ngrams(r, n)) for r in references))
            clipped += min(count, best)
        log_sa += math.log(max(clipped / total, PRECISION_FLOOR))
    c = len(candidate)
    # closest reference length; ties go to the shorter reference
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sa / 4.0)


# ---------------------------------------------------------------------------
# CIDEr
# ---------------------------------------------------------------------------

def _tf(tokens, n):
    grams = ngrams(tokens, n)
    if not grams:
        return {}
    count = Counter(grams)
    total = len(grams)
    return {g: c / total for g, c in count.items()}


def _cosine(a, b):
    dot = sum(v * b[g] for g, v in a.items() if g in b)
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


class CiderScorer:
    """Corpus-level idf built once, then scores candidates per video."""

    def __init__(self, corpus_reference_sets):
        if len(corpus_reference_sets) < 2:
            raise ContractViolation("cider: corpus must contain at least 2 videos")
        self.n_videos = len(corpus_reference_sets)
        self.df = [Counter() for _ in range(4)]
        for refs in corpus_reference_sets:
            for n in range(1, 5):
                seen = set()
                for ref in refs:
                    seen.update(ngrams(ref, n))
                self.df[n - 1].update(seen)  # document frequency per video
        self.log_n = math.log(self.n_videos)

    def _tfidf(self, tokens, n):
        return {g: tf * (self.log_n - math.log(max(1.0, self.df[n - 1][g])))
                for g, tf in _tf(tokens, n).items()}

    def score(self, candidate, references):
        if not references:
            raise ContractViolation("cider: empty reference set")
        per_order = []
        for n in range(1, 5):
            cand_vec = self._tfidf(candidate, n)
            sims = [_cosine(cand_vec, self._tfidf(ref, n)) for ref in references]
            per_order.append(sum(sims) / len(sims))
        return 10.0 * sum(per_order) / 4.0


def cider(candidates, reference_sets, corpus_reference_sets):
    """Per-video CIDEr scores with idf taken from `corpus_reference_sets`."""
    scorer = CiderScorer(corpus_reference_sets)
    return [scorer.score(c, r) for c, r in zip(candidates, reference_sets)]


# ---------------------------------------------------------------------------
# diversity
# ---------------------------------------------------------------------------

def div_n(tokens, n):
    """Unique n-grams over total word count; None when shorter than n."""
    if len(tokens) < n:
        return None
    return len(set(ngrams(tokens, n))) / len(tokens)


def rep_n(tokens, n):
    """Occurrences beyond the first over total n-grams; None when shorter than n."""
    if len(tokens) < n:
        return None
    grams = ngrams(tokens, n)
    return (len(grams) - len(set(grams))) / len(grams)


# ---------------------------------------------------------------------------
# n-gram frequency table
# ---------------------------------------------------------------------------

class NGramFrequencyTable:
    """Counts of order-n n-grams over a training reference corpus."""

    def __init__(self, order, counts=None):
        self.order = order
        self.counts = dict(counts or {})

    def freq(self, gram):
        return self.counts.get(tuple(gram), 0)

    def total(self):
        return sum(self.counts.values())

    def to_jsonable(self):
        items = sorted(self.counts.items())
        return {"order": self.order,
                "entries": [[list(g), c] for g, c in items]}

    @classmethod
    def from_jsonable(cls, payload):
        return cls(payload["order"],
                   {tuple(g): c for g, c in payload["entries"]})


def build_ngram_table(reference_corpus, n):
    """Exact n-gram counts over every reference paragraph in the corpus."""
    if not reference_corpus:
        raise ContractViolation("build_ngram_table: empty corpus")
    counts = Counter()
    for refs in reference_corpus:
        for ref in refs:
            counts.update(ngrams(ref, n))
    return NGramFrequencyTable(n, counts)


# ---------------------------------------------------------------------------
# rank correlation (attention-trace diagnostics)
# ---------------------------------------------------------------------------

def _ranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    ranks[order] = np.arange(len(values), dtype=np.float64)
    # average ties
    vals = np.asarray(values, dtype=np.float64)
    for v in np.unique(vals):
        mask = vals == v
        ranks[mask] = ranks[mask].mean()
    return ranks


def spearman(xs, ys):
    """Spearman rank correlation with average ranks for ties."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise ContractViolation("spearman: need two same-length sequences of >= 2")
    rx, ry = _ranks(xs), _ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0.0:
        return 0.0
    return float((rx * ry).sum() / denom)


# ---------------------------------------------------------------------------
# evaluation report
# ---------------------------------------------------------------------------

@dataclass
class EvaluationReport:
    """Per-video metric rows plus corpus means."""

    video_ids: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # dict per video
    means: dict = field(default_factory=dict)
    time_per_video_ms: float = 0.0

    METRICS = ("bleu4", "cider", "div1", "div2", "rep4", "length")

    def finalize(self):
        self.means = {}
        for key in self.METRICS:
            vals = [r[key] for r in self.rows if r[key] is not None]
            self.means[key] = sum(vals) / len(vals) if vals else None
        return self

    def to_text(self):
        lines = [f"videos\t{len(self.rows)}",
                 f"tpv_ms\t{self.time_per_video_ms:.3f}"]
        for key in self.METRICS:
            v = self.means.get(key)
            lines.append(f"{key}\t{'NA' if v is None else f'{v:.6f}'}")
        return "\n".join(lines) + "\n"

    def to_table(self):
        header = "video_id\t" + "\t".join(self.METRICS)
        lines = [header]
        for vid, row in zip(self.video_ids, self.rows):
            cells = ["NA" if row[k] is None else f"{row[k]:.6f}" for k in self.METRICS]
            lines.append(vid + "\t" + "\t".join(cells))
        return "\n".join(lines) + "\n"


def evaluate_paragraphs(video_ids, candidates, reference_sets, corpus_reference_sets):
    """Score a batch of generated paragraphs against their references."""
    scorer = CiderScorer(corpus_reference_sets)
    report = EvaluationReport()
    for vid, cand, refs in zip(video_ids, candidates, reference_sets):
        row = {
            "bleu4": bleu4(cand, refs) if cand else 0.0,
            "cider": scorer.score(cand, refs) if cand else 0.0,
            "div1": div_n(cand, 1),
            "div2": div_n(cand, 2),
            "rep4": rep_n(cand, 4),
            "length": float(len(cand)),
        }
        report.video_ids.append(vid)
        report.rows.append(row)
    return report.finalize()
