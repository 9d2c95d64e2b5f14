"""All trainable weights in one checkpointable registry.

Every tensor of the captioner (encoder, decoder, memory gates, output
projection) and of the joint-embedding summarizer is created here in a
fixed order from the `init` substream, so two runs with the same seed
share initial weights regardless of which ablation switches are active.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation
from .rng import substream

GRU_SUFFIXES = ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")


class ModelParameters:
    """Named tensor registry plus the hyperparameters that shaped it."""

    def __init__(self, cfg, vocab_size, seed=None):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.frozen_summarizer = False
        self.weights = {}
        rng = substream(cfg.seed if seed is None else seed, "init")
        self._build(rng)

    # -- construction -------------------------------------------------

    def _xavier(self, rng, rows, cols):
        a = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-a, a, size=(rows, cols))

    def _add(self, name, value, trainable=True):
        self.weights[name] = ad.Tensor(value, requires_grad=trainable)

    def _linear(self, rng, name, rows, cols):
        self._add(f"{name}.w", self._xavier(rng, rows, cols))
        self._add(f"{name}.b", np.zeros((1, cols)))

    def _layer_norm(self, name, d):
        self._add(f"{name}.g", np.ones((1, d)))
        self._add(f"{name}.b", np.zeros((1, d)))

    def _attention(self, rng, name, d):
        for part in ("wq", "wk", "wv", "wo"):
            self._add(f"{name}.{part}", self._xavier(rng, d, d))
        for part in ("bq", "bk", "bv", "bo"):
            self._add(f"{name}.{part}", np.zeros((1, d)))

    def _gru(self, rng, name, d_in, d_h):
        for suffix in GRU_SUFFIXES:
            if suffix.startswith("w"):
                self._add(f"{name}.{suffix}", self._xavier(rng, d_in, d_h))
            elif suffix.startswith("u"):
                self._add(f"{name}.{suffix}", self._xavier(rng, d_h, d_h))
            else:
                self._add(f"{name}.{suffix}", np.zeros((1, d_h)))

    def _build(self, rng):
        cfg = self.cfg
        d, v = cfg.d, self.vocab_size
        self._add("embed.tok", rng.normal(0.0, 0.1, size=(v, d)))
        self._add("embed.pos_dec", rng.normal(0.0, 0.1, size=(cfg.max_steps + 1, d)))
        self._add("enc.pos", rng.normal(0.0, 0.1, size=(cfg.max_clips, d)))
        self._linear(rng, "enc.in_proj", cfg.d_in, d)
        for i in range(cfg.layers):
            base = f"enc.l{i}"
            self._attention(rng, f"{base}.attn", d)
            self._layer_norm(f"{base}.ln1", d)
            self._linear(rng, f"{base}.score", d, 1)
            self._linear(rng, f"{base}.ffn1", d, cfg.d_ff)
            self._linear(rng, f"{base}.ffn2", cfg.d_ff, d)
            self._layer_norm(f"{base}.ln2", d)
        for i in range(cfg.layers):
            base = f"dec.l{i}"
            self._attention(rng, f"{base}.self", d)
            self._layer_norm(f"{base}.ln1", d)
            self._attention(rng, f"{base}.cross", d)
            self._layer_norm(f"{base}.ln2", d)
            self._linear(rng, f"{base}.ffn1", d, cfg.d_ff)
            self._linear(rng, f"{base}.ffn2", cfg.d_ff, d)
            self._layer_norm(f"{base}.ln3", d)
        self._linear(rng, "gate.add", d, 1)
        self._linear(rng, "gate.ers", d, 1)
        self._linear(rng, "gate.vis", 2 * d, 1)
        self._linear(rng, "gate.sem", 2 * d, 1)
        self._linear(rng, "out", d, v)
        # summarizer (visual-semantic joint embedding)
        dj = cfg.joint_dim
        self._gru(rng, "sum.v", cfg.d_in, dj)
        self._linear(rng, "sum.v.proj", dj, dj)
        self._add("sum.t.embed", rng.normal(0.0, 0.1, size=(v, dj)))
        self._gru(rng, "sum.t", dj, dj)
        self._linear(rng, "sum.t.proj", dj, dj)

    # -- access helpers -----------------------------------------------

    def __getitem__(self, name):
        return self.weights[name]

    def group(self, prefix):
        return {k: t for k, t in self.weights.items() if k.startswith(prefix)}

    def gru_weights(self, prefix):
        return {s: self.weights[f"{prefix}.{s}"] for s in GRU_SUFFIXES}

    def captioner_tensors(self):
        return {k: t for k, t in self.weights.items() if not k.startswith("sum.")}

    def summarizer_tensors(self):
        return self.group("sum.")

    def freeze_summarizer(self):
        for t in self.summarizer_tensors().values():
            t.requires_grad = False
        self.frozen_summarizer = True

    def zero_grads(self):
        for t in self.weights.values():
            t.grad = None

    # -- (de)serialization --------------------------------------------

    def state_dict(self):
        return {k: t.data for k, t in self.weights.items()}

    def load_state(self, state):
        missing = set(self.weights) - set(state)
        extra = set(state) - set(self.weights)
        if missing or extra:
            raise ContractViolation(
                f"state mismatch: missing {sorted(missing)[:4]}, extra {sorted(extra)[:4]}")
        for k, t in self.weights.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ContractViolation(
                    f"shape mismatch for {k}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def clone(self):
        other = ModelParameters.__new__(ModelParameters)
        other.cfg = self.cfg
        other.vocab_size = self.vocab_size
        other.frozen_summarizer = self.frozen_summarizer
        other.weights = {k: ad.Tensor(t.data.copy(), requires_grad=t.requires_grad)
                         for k, t in self.weights.items()}
        return other
