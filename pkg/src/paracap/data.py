"""Deterministic synthetic untrimmed-video corpus.

Each video is a feature sequence built from a small event grammar: 2-4
events drawn from prototype vectors (plus noise), interleaved with filler
clips that are either prototype-free noise or near-duplicate repeats of
earlier clips. The paired paragraph is the events' sentences in temporal
order. Event boundaries are written to a sidecar file for diagnostics
only; the model never sees them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .rng import substream
from .vocab import Vocabulary

SUBJECTS = ["man", "woman", "boy", "girl", "chef", "dancer"]
ADVERBS = ["quickly", "slowly", "calmly", "happily"]

_EVENT_SPECS = [
    ("cooking", ["soup", "pasta", "sauce", "salad"], [
        "the {subj} stirs the {obj} in a kitchen .",
        "a {subj} is cooking {obj} on the stove .",
        "the {subj} tastes the {obj} and smiles .",
        "the {subj} {adv} prepares the {obj} .",
    ]),
    ("music", ["guitar", "piano", "drums", "violin"], [
        "the {subj} plays the {obj} on a stage .",
        "a {subj} performs a song with the {obj} .",
        "the {subj} starts playing the {obj} loudly .",
        "the {subj} {adv} tunes the {obj} .",
    ]),
    ("sport", ["ball", "rope", "weights", "bike"], [
        "the {subj} exercises with the {obj} outside .",
        "a {subj} trains using the {obj} in a gym .",
        "the {subj} lifts the {obj} several times .",
        "the {subj} {adv} stretches beside the {obj} .",
    ]),
    ("cleaning", ["floor", "window", "table", "car"], [
        "the {subj} cleans the {obj} with a cloth .",
        "a {subj} is wiping the {obj} carefully .",
        "the {subj} scrubs the {obj} and rinses it .",
        "the {subj} {adv} polishes the {obj} .",
    ]),
    ("painting", ["wall", "fence", "portrait", "vase"], [
        "the {subj} paints the {obj} with a brush .",
        "a {subj} is painting the {obj} in bright colors .",
        "the {subj} finishes painting the {obj} today .",
        "the {subj} {adv} sketches the {obj} .",
    ]),
    ("gardening", ["flowers", "tree", "lawn", "hedge"], [
        "the {subj} waters the {obj} in a garden .",
        "a {subj} plants the {obj} near the house .",
        "the {subj} trims the {obj} with shears .",
        "the {subj} {adv} digs around the {obj} .",
    ]),
]


@dataclass
class EventType:
    name: str
    prototype: np.ndarray          # (d_in,)
    duration: tuple                # inclusive clip-count range
    templates: list
    objects: list


@dataclass
class EventGrammar:
    d_in: int
    event_types: list
    subjects: list = field(default_factory=lambda: list(SUBJECTS))
    adverbs: list = field(default_factory=lambda: list(ADVERBS))
    events_range: tuple = (2, 4)
    filler_gap_range: tuple = (1, 4)   # filler clips between/around events
    min_clips: int = 20
    max_clips: int = 40
    noise_scale: float = 0.3
    filler_scale: float = 0.3
    duplicate_scale: float = 0.05
    duplicate_prob: float = 0.4
    min_prototype_distance: float = 2.5

    def validate(self):
        protos = np.stack([e.prototype for e in self.event_types])
        for i in range(len(protos)):
            for j in range(i + 1, len(protos)):
                if np.linalg.norm(protos[i] - protos[j]) < self.min_prototype_distance:
                    raise ContractViolation(
                        f"prototypes {i} and {j} closer than "
                        f"{self.min_prototype_distance}")
        if any(not e.templates for e in self.event_types):
            raise ContractViolation("every event type needs at least one template")
        return self

    def vocabulary_words(self):
        words = set(self.subjects) | set(self.adverbs)
        for ev in self.event_types:
            words.update(ev.objects)
            for tpl in ev.templates:
                for tok in tpl.split():
                    if not (tok.startswith("{") and tok.endswith("}")):
                        words.add(tok)
        return sorted(words)

    def to_jsonable(self):
        return {
            "d_in": self.d_in,
            "subjects": self.subjects,
            "adverbs": self.adverbs,
            "events_range": list(self.events_range),
            "filler_gap_range": list(self.filler_gap_range),
            "min_clips": self.min_clips,
            "max_clips": self.max_clips,
            "noise_scale": self.noise_scale,
            "filler_scale": self.filler_scale,
            "duplicate_scale": self.duplicate_scale,
            "duplicate_prob": self.duplicate_prob,
            "min_prototype_distance": self.min_prototype_distance,
            "event_types": [
                {"name": e.name, "prototype": e.prototype.tolist(),
                 "duration": list(e.duration), "templates": e.templates,
                 "objects": e.objects}
                for e in self.event_types
            ],
        }

    @classmethod
    def from_jsonable(cls, payload):
        events = [EventType(e["name"], np.asarray(e["prototype"], dtype=np.float64),
                            tuple(e["duration"]), e["templates"], e["objects"])
                  for e in payload["event_types"]]
        return cls(
            d_in=payload["d_in"], event_types=events,
            subjects=payload["subjects"], adverbs=payload["adverbs"],
            events_range=tuple(payload["events_range"]),
            filler_gap_range=tuple(payload["filler_gap_range"]),
            min_clips=payload["min_clips"], max_clips=payload["max_clips"],
            noise_scale=payload["noise_scale"], filler_scale=payload["filler_scale"],
            duplicate_scale=payload["duplicate_scale"],
            duplicate_prob=payload["duplicate_prob"],
            min_prototype_distance=payload["min_prototype_distance"],
        ).validate()


def default_grammar(seed, d_in=32):
    """Grammar with well-separated random prototypes and the stock templates."""
    rng = substream(seed, "data", 0)
    for _ in range(100):
        protos = rng.normal(size=(len(_EVENT_SPECS), d_in))
        protos *= 3.0 / np.linalg.norm(protos, axis=1, keepdims=True)
        dists = [np.linalg.norm(protos[i] - protos[j])
                 for i in range(len(protos)) for j in range(i + 1, len(protos))]
        if min(dists) >= 2.5:
            break
    events = [EventType(name, protos[i], (4, 8), templates, objects)
              for i, (name, objects, templates) in enumerate(_EVENT_SPECS)]
    return EventGrammar(d_in=d_in, event_types=events).validate()


def build_vocabulary(grammar):
    return Vocabulary(grammar.vocabulary_words())


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass
class SyntheticVideoRecord:
    """Model-visible part of one video."""

    video_id: str
    features: np.ndarray     # (L, d_in)
    refs: list               # >= 1 token-id paragraphs

    MODEL_VISIBLE_FIELDS = ("id", "shape", "features", "refs")

    def to_jsonable(self):
        return {"id": self.video_id,
                "shape": list(self.features.shape),
                "features": [round(v, 10) for v in self.features.reshape(-1).tolist()],
                "refs": self.refs}

    @classmethod
    def from_jsonable(cls, payload):
        shape = tuple(payload["shape"])
        feats = np.asarray(payload["features"], dtype=np.float64).reshape(shape)
        return cls(payload["id"], feats, payload["refs"])


def _fill(template, subj, obj, adv):
    return template.format(subj=subj, obj=obj, adv=adv).split()


def _fit_gaps(gaps, event_total, lo, hi):
    """Shrink/grow filler gaps so the video lands inside [lo, hi] clips."""
    total = event_total + sum(gaps)
    i = 0
    while total > hi and any(g > 0 for g in gaps):
        j = i % len(gaps)
        if gaps[j] > 0:
            gaps[j] -= 1
            total -= 1
        i += 1
    while total < lo:
        gaps[-1] += 1
        total += 1
    return gaps


def generate_video(grammar, vocab, rng, n_refs):
    """One record: features, n_refs paragraphs, event spans."""
    n_events = int(rng.integers(grammar.events_range[0], grammar.events_range[1] + 1))
    picks = []
    for _ in range(n_events):
        ev = grammar.event_types[int(rng.integers(len(grammar.event_types)))]
        dur = int(rng.integers(ev.duration[0], ev.duration[1] + 1))
        subj = grammar.subjects[int(rng.integers(len(grammar.subjects)))]
        obj = ev.objects[int(rng.integers(len(ev.objects)))]
        adv = grammar.adverbs[int(rng.integers(len(grammar.adverbs)))]
        tpl = int(rng.integers(len(ev.templates)))
        picks.append((ev, dur, subj, obj, adv, tpl))

    glo, ghi = grammar.filler_gap_range
    gaps = [int(rng.integers(glo, ghi + 1)) for _ in range(n_events + 1)]
    gaps = _fit_gaps(gaps, sum(p[1] for p in picks), grammar.min_clips, grammar.max_clips)

    clips, spans = [], []
    d_in = grammar.d_in

    def filler_clip():
        if clips and rng.random() < grammar.duplicate_prob:
            src = clips[int(rng.integers(len(clips)))]
            return src + grammar.duplicate_scale * rng.normal(size=d_in)
        return grammar.filler_scale * rng.normal(size=d_in)

    for idx, (ev, dur, *_rest) in enumerate(picks):
        for _ in range(gaps[idx]):
            clips.append(filler_clip())
        start = len(clips)
        for _ in range(dur):
            clips.append(ev.prototype + grammar.noise_scale * rng.normal(size=d_in))
        spans.append([start, len(clips), ev.name])
    for _ in range(gaps[-1]):
        clips.append(filler_clip())

    refs = []
    for k in range(n_refs):
        tokens = []
        for ev, _dur, subj, obj, adv, tpl in picks:
            tokens.extend(_fill(ev.templates[(tpl + k) % len(ev.templates)], subj, obj, adv))
        refs.append(vocab.encode(tokens))
    return np.stack(clips), refs, spans


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------

_SPLITS = (("train", 1), ("val", 2), ("test", 2))


def generate_corpus(grammar, counts, seed, out_dir):
    """Write train/val/test jsonl files plus vocab, grammar and sidecars.

    Fully deterministic per (grammar, counts, seed); each video uses the
    substream (seed, "data", split-index, video-index).
    """
    grammar.validate()
    for split, _ in _SPLITS:
        if counts.get(split, 0) < 1:
            raise ContractViolation(f"counts[{split!r}] must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    vocab = build_vocabulary(grammar)
    vocab.save(os.path.join(out_dir, "vocab.json"))
    with open(os.path.join(out_dir, "grammar.json"), "w") as fh:
        json.dump(grammar.to_jsonable(), fh, sort_keys=True)
        fh.write("\n")

    stats = {}
    for split_idx, (split, n_refs) in enumerate(_SPLITS):
        n_videos = counts[split]
        rec_path = os.path.join(out_dir, f"{split}.jsonl")
        side_path = os.path.join(out_dir, f"{split}_boundaries.jsonl")
        n_events_total, n_tokens_total, n_span_clips, n_clips = 0, 0, 0, 0
        with open(rec_path, "w") as rec_fh, open(side_path, "w") as side_fh:
            for i in range(n_videos):
                rng = substream(seed, "data", split_idx + 1, i)
                feats, refs, spans = generate_video(grammar, vocab, rng, n_refs)
                vid = f"{split}_{i:04d}"
                rec = SyntheticVideoRecord(vid, feats, refs)
                rec_fh.write(json.dumps(rec.to_jsonable(), sort_keys=True) + "\n")
                side_fh.write(json.dumps({"id": vid, "spans": spans}, sort_keys=True) + "\n")
                n_events_total += len(spans)
                n_tokens_total += len(refs[0])
                n_span_clips += sum(e - s for s, e, _ in spans)
                n_clips += feats.shape[0]
        stats[split] = {
            "videos": n_videos,
            "mean_events": n_events_total / n_videos,
            "mean_paragraph_tokens": n_tokens_total / n_videos,
            "span_coverage": n_span_clips / n_clips,
            "mean_clips": n_clips / n_videos,
        }
    with open(os.path.join(out_dir, "stats.json"), "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return stats


def load_split(data_dir, split):
    path = os.path.join(data_dir, f"{split}.jsonl")
    records = []
    with open(path) as fh:
        for line in fh:
            records.append(SyntheticVideoRecord.from_jsonable(json.loads(line)))
    return records


def load_boundaries(data_dir, split):
    path = os.path.join(data_dir, f"{split}_boundaries.jsonl")
    spans = {}
    with open(path) as fh:
        for line in fh:
            payload = json.loads(line)
            spans[payload["id"]] = payload["spans"]
    return spans


def load_vocabulary(data_dir):
    return Vocabulary.load(os.path.join(data_dir, "vocab.json"))


def keyframe_diagnostics(selected_indices, spans):
    """Fraction of selected clip indices that fall inside any event span."""
    if len(selected_indices) == 0:
        return 0.0
    inside = 0
    for i in selected_indices:
        if any(s <= i < e for s, e, _ in spans):
            inside += 1
    return inside / len(selected_indices)
