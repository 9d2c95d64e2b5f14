"""Losses, optimization and the staged training loop.

Stage order: the joint-embedding summarizer is pretrained with the
retrieval triplet loss and frozen; the captioner then trains with the
(optionally unlikelihood-augmented) MLE loss plus the two video summary
losses; finally an optional self-critical stage fine-tunes with the
CIDEr relevance reward and the inverse-frequency diversity reward.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import autodiff as ad
from . import memory as mem
from .checkpoint import load_checkpoint, save_checkpoint
from .config import training_view
from .encoder import encode
from .errors import ContractViolation
from .metrics import CiderScorer, build_ngram_table
from .model import ModelParameters
from .rng import substream
from .summary import (raw_video_state, reconstruction_loss, sparsity_loss,
                      summarize_text, summarize_video, triplet_retrieval_loss)

LOG_EPS = 1e-12


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def mle_loss(logits, targets, smoothing):
    """Mean label-smoothed negative log-likelihood over the steps."""
    if logits.data.shape[0] != len(targets):
        raise ContractViolation(
            f"mle_loss: {logits.data.shape[0]} logit rows vs {len(targets)} targets")
    return ad.cross_entropy_label_smoothing(logits, targets, smoothing)


def candidate_mask(targets, vocab_size):
    """0/1 matrix marking the unlikelihood candidates C^t per step.

    C^t holds the distinct earlier target tokens minus the current one.
    """
    mask = np.zeros((len(targets), vocab_size))
    seen = set()
    for t, target in enumerate(targets):
        for c in seen:
            if c != target:
                mask[t, c] = 1.0
        seen.add(target)
    return mask


def unlikelihood_mle_loss(logits, targets):
    """NLL plus penalties on the probabilities of earlier context tokens."""
    steps = logits.data.shape[0]
    if steps != len(targets):
        raise ContractViolation(
            f"unlikelihood_mle_loss: {steps} logit rows vs {len(targets)} targets")
    logp = ad.log_softmax_last(logits)
    nll = ad.sum_(ad.gather_last(logp, np.asarray(targets)))
    mask = candidate_mask(targets, logits.data.shape[1])
    one_minus_p = ad.affine_const(ad.exp(logp), -1.0, 1.0 + LOG_EPS)
    penalty = ad.sum_(ad.mul(ad.log(one_minus_p), ad.constant(mask)))
    return ad.scalar_scale(ad.add(nll, penalty), -1.0 / steps)


def diversity_reward(tokens, table, n=None):
    """Per-token mean inverse training frequency of the covering n-grams.

    Unseen n-grams count as frequency 1; sequences shorter than n get
    zero everywhere.
    """
    n = table.order if n is None else n
    if n != table.order:
        raise ContractViolation(f"diversity_reward: table order {table.order} != {n}")
    length = len(tokens)
    rewards = np.zeros(length)
    if length < n:
        return rewards
    grams = [tuple(tokens[i:i + n]) for i in range(length - n + 1)]
    for t in range(length):
        covering = {grams[i] for i in range(max(0, t - n + 1), min(t, length - n) + 1)}
        rewards[t] = sum(1.0 / max(table.freq(g), 1) for g in covering) / len(covering)
    return rewards


def rl_loss(sample_tokens, sample_logps, greedy_tokens, references, table,
            beta, scorer, use_rlv=True, use_div=True):
    """Self-critical policy-gradient loss with relevance + diversity rewards.

    The CIDEr advantage is a sequence-level scalar; the diversity
    advantage is per token against the greedy sequence's mean reward.
    Returns (loss tensor, info dict with the advantages).
    """
    steps = len(sample_tokens)
    if steps == 0:
        raise ContractViolation("rl_loss: empty sampled sequence")
    if len(sample_logps) != steps:
        raise ContractViolation(
            f"rl_loss: {len(sample_logps)} log-probs vs {steps} tokens")
    cider_s = scorer.score(sample_tokens, references)
    cider_g = scorer.score(greedy_tokens, references) if greedy_tokens else 0.0
    adv_rlv = (cider_s - cider_g) if use_rlv else 0.0
    r_sample = diversity_reward(sample_tokens, table)
    r_greedy = diversity_reward(greedy_tokens, table)
    baseline = r_greedy.mean() if r_greedy.size else 0.0
    adv_div = (r_sample - baseline) if use_div else np.zeros(steps)
    weights = [-(adv_rlv + beta * adv_div[t]) / steps for t in range(steps)]
    loss = ad.weighted_sum(sample_logps, weights)
    info = {"adv_rlv": adv_rlv, "adv_div": adv_div,
            "cider_sample": cider_s, "cider_greedy": cider_g,
            "r_div_sample": float(r_sample.mean()) if r_sample.size else 0.0}
    return loss, info


def captioning_loss(mp, record, eos_id, bos_id, raw_state=None, cfg=None):
    """Full pretraining objective for one video (Eq-25 shaped).

    MLE (token-penalty variant when enabled) plus lambda1 * reconstruction
    and lambda2 * sparsity when the keyframe gate is active. Returns
    (total tensor, components dict of floats).
    """
    cfg = cfg or mp.cfg
    enc = encode(record.features, mp, keyframe_gate=cfg.keyframe_gate)
    targets = list(record.refs[0]) + [eos_id]
    logits, _ = mem.teacher_force(enc.v_enc, targets, mp, bos_id,
                                  pme=cfg.pme, omd=cfg.omd)
    if cfg.token_penalty:
        base = unlikelihood_mle_loss(logits, targets)
    else:
        base = mle_loss(logits, targets, cfg.label_smoothing)
    components = {"mle": base.item()}
    total = base
    if cfg.keyframe_gate:
        rec = reconstruction_loss(record.features, enc.scores, mp, raw_state=raw_state)
        spa = sparsity_loss(enc.scores, cfg.delta)
        components["reconst"] = rec.item()
        components["sparsity"] = spa.item()
        total = ad.add(total, ad.add(ad.scalar_scale(rec, cfg.lambda1),
                                     ad.scalar_scale(spa, cfg.lambda2)))
    components["total"] = total.item()
    return total, components


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def lr_schedule(step, d, warmup):
    """Inverse-square-root schedule with linear warmup (peak at `warmup`)."""
    if step < 1:
        raise ContractViolation(f"lr_schedule: step {step} < 1")
    return d ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


class Adam:
    """Adaptive-moment optimizer over a named tensor dict."""

    def __init__(self, tensors, beta1=0.9, beta2=0.999, eps=1e-8):
        self.tensors = tensors
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in tensors.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in tensors.items()}
        self.t = 0

    def grad_norm(self):
        total = 0.0
        for t in self.tensors.values():
            if t.grad is not None:
                total += float((t.grad * t.grad).sum())
        return np.sqrt(total)

    def step(self, lr, max_grad_norm=0.0):
        self.t += 1
        scale = 1.0
        if max_grad_norm > 0.0:
            norm = self.grad_norm()
            if norm > max_grad_norm:
                scale = max_grad_norm / (norm + 1e-12)
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, t in self.tensors.items():
            if t.grad is None:
                continue
            g = t.grad * scale
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            t.data = t.data - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_arrays(self, prefix):
        out = {f"{prefix}.m.{k}": v for k, v in self.m.items()}
        out.update({f"{prefix}.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, prefix, arrays, t):
        for k in self.m:
            self.m[k] = np.asarray(arrays[f"{prefix}.m.{k}"], dtype=np.float64).copy()
            self.v[k] = np.asarray(arrays[f"{prefix}.v.{k}"], dtype=np.float64).copy()
        self.t = t


# ---------------------------------------------------------------------------
# staged training
# ---------------------------------------------------------------------------

class Trainer:
    """Owns the parameters, optimizer state and stage progress for one run."""

    def __init__(self, cfg, vocab, out_dir=None):
        self.cfg = cfg
        self.vocab = vocab
        self.out_dir = out_dir
        self.mp = ModelParameters(cfg, len(vocab))
        self.opt = None                 # captioner optimizer, created lazily
        self.progress = {"pretrain": 0, "mle": 0, "rl": 0}
        self.raw_states = {}
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        self._log_path = os.path.join(out_dir, "metrics.jsonl") if out_dir else None

    # -- plumbing ------------------------------------------------------

    def log(self, payload):
        if self._log_path:
            with open(self._log_path, "a") as fh:
                fh.write(json.dumps(payload, sort_keys=True) + "\n")

    def _ensure_opt(self):
        if self.opt is None:
            self.opt = Adam(self.mp.captioner_tensors())

    def _abort_on_nonfinite(self, loss_val, stage, epoch, ids):
        if np.isfinite(loss_val):
            return
        dump = {"stage": stage, "epoch": epoch, "batch_ids": ids, "loss": str(loss_val)}
        if self.out_dir:
            with open(os.path.join(self.out_dir, "diagnostic_dump.json"), "w") as fh:
                json.dump(dump, fh, indent=2)
        raise RuntimeError(f"non-finite loss in {stage} epoch {epoch}: batch {ids}")

    def save(self, path, stage, epoch):
        tensors = dict(self.mp.state_dict())
        extra = {
            "stage": stage,
            "progress": dict(self.progress),
            "frozen_summarizer": self.mp.frozen_summarizer,
            "rng": {"seed": self.cfg.seed, "scheme": "stateless-substreams"},
            "vocab": list(self.vocab.tokens),
        }
        if self.opt is not None:
            tensors.update(self.opt.state_arrays("adam"))
            extra["adam_t"] = self.opt.t
        save_checkpoint(path, tensors, training_view(self.cfg), extra)

    def load(self, path, expect_config=True):
        tensors, config, extra = load_checkpoint(path)
        if expect_config:
            mine = training_view(self.cfg)
            diffs = {k: (config.get(k), mine[k]) for k in mine if config.get(k) != mine[k]}
            if diffs:
                raise ContractViolation(
                    f"checkpoint/config mismatch: {json.dumps(diffs, sort_keys=True)}")
        weights = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
        self.mp.load_state(weights)
        if extra.get("frozen_summarizer"):
            self.mp.freeze_summarizer()
        self.progress = {k: int(v) for k, v in extra["progress"].items()}
        if "adam_t" in extra:
            self._ensure_opt()
            self.opt.load_state_arrays("adam", tensors, int(extra["adam_t"]))
        return extra

    def _shuffled(self, records, stage_tag, epoch):
        order = substream(self.cfg.seed, "shuffle", stage_tag, epoch).permutation(len(records))
        return [records[i] for i in order]

    def cache_raw_states(self, records):
        for rec in records:
            if rec.video_id not in self.raw_states:
                self.raw_states[rec.video_id] = raw_video_state(rec.features, self.mp)

    # -- stages ---------------------------------------------------------

    def pretrain_embed(self, records, epochs=None):
        """Triplet-retrieval pretraining of the summarizer; freezes it after."""
        cfg = self.cfg
        epochs = cfg.pretrain_epochs if epochs is None else epochs
        opt = Adam(self.mp.summarizer_tensors())
        for epoch in range(self.progress["pretrain"], epochs):
            shuffled = self._shuffled(records, 0, epoch)
            losses = []
            for start in range(0, len(shuffled) - 1, cfg.pretrain_batch):
                batch = shuffled[start:start + cfg.pretrain_batch]
                if len(batch) < 2:
                    continue
                self.mp.zero_grads()
                with ad.ComputationTape() as tape:
                    v_embs = [summarize_video(r.features, self.mp) for r in batch]
                    t_embs = [summarize_text(r.refs[0], self.mp) for r in batch]
                    loss = ad.scalar_scale(
                        triplet_retrieval_loss(v_embs, t_embs, cfg.triplet_margin),
                        1.0 / len(batch))
                    tape.backward(loss)
                self._abort_on_nonfinite(loss.item(), "pretrain", epoch,
                                         [r.video_id for r in batch])
                opt.step(2e-3, cfg.max_grad_norm)
                losses.append(loss.item())
            self.progress["pretrain"] = epoch + 1
            self.log({"stage": "pretrain", "epoch": epoch,
                      "triplet_loss": float(np.mean(losses))})
        self.mp.freeze_summarizer()
        self.mp.zero_grads()

    def train_mle(self, records, epochs=None, epoch_hook=None):
        """Teacher-forced stage with the Eq-25-shaped objective."""
        cfg = self.cfg
        epochs = cfg.mle_epochs if epochs is None else epochs
        if cfg.keyframe_gate and not self.mp.frozen_summarizer:
            raise ContractViolation("train_mle: run pretrain_embed first "
                                    "(summary losses need the frozen summarizer)")
        self._ensure_opt()
        if cfg.keyframe_gate:
            self.cache_raw_states(records)
        for epoch in range(self.progress["mle"], epochs):
            shuffled = self._shuffled(records, 1, epoch)
            sums = {}
            for start in range(0, len(shuffled), cfg.batch_size):
                batch = shuffled[start:start + cfg.batch_size]
                self.mp.zero_grads()
                batch_val = 0.0
                for rec in batch:
                    raw = self.raw_states.get(rec.video_id)
                    with ad.ComputationTape() as tape:
                        total, comps = captioning_loss(
                            self.mp, rec, self.vocab.eos_id, self.vocab.bos_id,
                            raw_state=raw)
                        tape.backward(ad.scalar_scale(total, 1.0 / len(batch)))
                    batch_val += comps["total"]
                    for k, v in comps.items():
                        sums[k] = sums.get(k, 0.0) + v
                self._abort_on_nonfinite(batch_val, "mle", epoch,
                                         [r.video_id for r in batch])
                lr = cfg.lr_scale * lr_schedule(self.opt.t + 1, cfg.d, cfg.warmup)
                self.opt.step(lr, cfg.max_grad_norm)
            self.progress["mle"] = epoch + 1
            entry = {"stage": "mle", "epoch": epoch}
            entry.update({k: v / len(records) for k, v in sums.items()})
            if epoch_hook:
                entry.update(epoch_hook(self, epoch) or {})
            self.log(entry)

    def finetune_rl(self, records, table, scorer, epochs=None, epoch_hook=None):
        """Self-critical fine-tuning with relevance + diversity rewards."""
        cfg = self.cfg
        epochs = cfg.rl_epochs if epochs is None else epochs
        self._ensure_opt()
        index = {rec.video_id: i for i, rec in enumerate(records)}
        for epoch in range(self.progress["rl"], epochs):
            shuffled = self._shuffled(records, 2, epoch)
            losses, infos = [], []
            for start in range(0, len(shuffled), cfg.batch_size):
                batch = shuffled[start:start + cfg.batch_size]
                self.mp.zero_grads()
                batch_val, used = 0.0, 0
                for rec in batch:
                    enc = encode(rec.features, self.mp, keyframe_gate=cfg.keyframe_gate)
                    greedy, _ = mem.generate_paragraph(
                        enc.v_enc, self.mp, self.vocab.bos_id, self.vocab.eos_id,
                        cfg.max_steps, mode="greedy")
                    rng = substream(cfg.seed, "sampling", epoch, index[rec.video_id])
                    with ad.ComputationTape() as tape:
                        enc_s = encode(rec.features, self.mp,
                                       keyframe_gate=cfg.keyframe_gate)
                        sample, trace, logps = mem.generate_paragraph(
                            enc_s.v_enc, self.mp, self.vocab.bos_id, self.vocab.eos_id,
                            cfg.max_steps, mode="sample", rng=rng, collect_logps=True)
                        if not sample:
                            continue
                        if trace.tokens[-1] == self.vocab.eos_id:
                            logps = logps[:-1]  # reward covers content tokens only
                        loss, info = rl_loss(
                            sample, logps, greedy, rec.refs, table, cfg.beta, scorer,
                            use_rlv=cfg.rlv_reward, use_div=cfg.div_reward)
                        loss = ad.scalar_scale(loss, 1.0 / len(batch))
                        tape.backward(loss)
                    batch_val += loss.item()
                    used += 1
                    losses.append(loss.item())
                    infos.append(info)
                if used == 0:
                    continue
                self._abort_on_nonfinite(batch_val, "rl", epoch,
                                         [r.video_id for r in batch])
                lr = cfg.lr_scale * lr_schedule(self.opt.t + 1, cfg.d, cfg.warmup)
                self.opt.step(lr, cfg.max_grad_norm)
            self.progress["rl"] = epoch + 1
            entry = {"stage": "rl", "epoch": epoch,
                     "rl_loss": float(np.mean(losses)) if losses else 0.0,
                     "mean_r_div": float(np.mean([i["r_div_sample"] for i in infos]))
                     if infos else 0.0,
                     "mean_cider_sample": float(np.mean([i["cider_sample"] for i in infos]))
                     if infos else 0.0}
            if epoch_hook:
                entry.update(epoch_hook(self, epoch) or {})
            self.log(entry)


def build_reward_context(records, order=4):
    """N-gram table and CIDEr scorer from the training references."""
    corpus = [rec.refs for rec in records]
    table = build_ngram_table(corpus, order)
    scorer = CiderScorer(corpus)
    return table, scorer


def load_model_from_checkpoint(path):
    """Rebuild (model, config, vocabulary) from a training checkpoint."""
    from .config import training_config_from_dict
    from .vocab import Vocabulary

    tensors, config, extra = load_checkpoint(path)
    cfg = training_config_from_dict(config)
    vocab = Vocabulary(extra["vocab"][3:])
    mp = ModelParameters(cfg, len(vocab))
    mp.load_state({k: v for k, v in tensors.items() if not k.startswith("adam.")})
    if extra.get("frozen_summarizer"):
        mp.freeze_summarizer()
    return mp, cfg, vocab
