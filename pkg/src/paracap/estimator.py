"""Scikit-learn style facade over the captioning pipeline.

`VideoParagraphCaptioner.fit` takes a list of clip-feature matrices and
their reference paragraphs (string tokens), runs the staged training
(summarizer pretraining, MLE, optional RL) and `predict` returns greedy
paragraphs with hard keyframe selection. `KeyframeSelector` exposes the
learned selection as a transformer.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .config import TrainingConfig, training_config_from_dict
from .data import SyntheticVideoRecord
from .encoder import encode, select_keyframes
from .evaluate import decode_video, evaluate_split
from .training import Trainer, build_reward_context
from .validation import check_feature_sequences, check_paragraphs
from .vocab import Vocabulary


def _collect_vocab(paragraphs):
    words = sorted({tok for p in paragraphs for tok in p})
    return Vocabulary(words)


class VideoParagraphCaptioner(BaseEstimator):
    """Fit a paragraph captioner on (features, paragraphs) pairs.

    Parameters mirror the training config; anything not exposed here can
    be passed through `config_overrides`.
    """

    def __init__(self, d=64, layers=2, heads=2, delta=0.5, beta=0.3,
                 lambda1=0.5, lambda2=0.5, history_window=8,
                 mle_epochs=12, rl_epochs=0, seed=0, config_overrides=None):
        self.d = d
        self.layers = layers
        self.heads = heads
        self.delta = delta
        self.beta = beta
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.history_window = history_window
        self.mle_epochs = mle_epochs
        self.rl_epochs = rl_epochs
        self.seed = seed
        self.config_overrides = config_overrides

    def _config(self, d_in):
        payload = {
            "d": self.d, "layers": self.layers, "heads": self.heads,
            "delta": self.delta, "beta": self.beta,
            "lambda1": self.lambda1, "lambda2": self.lambda2,
            "history_window": self.history_window,
            "mle_epochs": self.mle_epochs, "rl_epochs": self.rl_epochs,
            "seed": self.seed, "d_in": d_in,
        }
        payload.update(self.config_overrides or {})
        return training_config_from_dict(payload)

    def fit(self, X, y):
        X = check_feature_sequences(X)
        y = check_paragraphs(y, n_expected=len(X))
        cfg = self._config(d_in=X[0].shape[1])
        self.vocab_ = _collect_vocab(y)
        records = [SyntheticVideoRecord(f"fit_{i:04d}", x, [self.vocab_.encode(p)])
                   for i, (x, p) in enumerate(zip(X, y))]
        self.trainer_ = Trainer(cfg, self.vocab_)
        self.trainer_.pretrain_embed(records)
        self.trainer_.train_mle(records)
        if cfg.rl_epochs > 0:
            table, scorer = build_reward_context(records, cfg.ngram_order)
            self.trainer_.finetune_rl(records, table, scorer)
        self.model_ = self.trainer_.mp
        self._train_refs_ = [r.refs for r in records]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("VideoParagraphCaptioner is not fitted yet")

    def predict(self, X):
        """Greedy paragraphs (lists of string tokens) per video."""
        self._check_fitted()
        cfg = self.model_.cfg
        X = check_feature_sequences(X, d_in=cfg.d_in, max_clips=cfg.max_clips)
        out = []
        for x in X:
            tokens, _, _ = decode_video(self.model_, x, self.vocab_, self.delta)
            out.append(self.vocab_.decode(tokens))
        return out

    def score(self, X, y):
        """Mean CIDEr of the predictions against `y` (idf from training refs)."""
        self._check_fitted()
        cfg = self.model_.cfg
        X = check_feature_sequences(X, d_in=cfg.d_in, max_clips=cfg.max_clips)
        y = check_paragraphs(y, n_expected=len(X))
        records = [SyntheticVideoRecord(f"score_{i:04d}", x, [self.vocab_.encode(p)])
                   for i, (x, p) in enumerate(zip(X, y))]
        report, _ = evaluate_split(self.model_, records, self.vocab_,
                                   self._train_refs_, delta=self.delta)
        return report.means["cider"]


class KeyframeSelector(BaseEstimator, TransformerMixin):
    """Reduce each clip sequence to its learned keyframes.

    Wraps a fitted `VideoParagraphCaptioner`; `transform` keeps the top
    ceil(delta*L) raw clip rows in temporal order.
    """

    def __init__(self, captioner, delta=0.5):
        self.captioner = captioner
        self.delta = delta

    def fit(self, X, y=None):
        self.captioner._check_fitted()
        return self

    def transform(self, X):
        self.captioner._check_fitted()
        model = self.captioner.model_
        X = check_feature_sequences(X, d_in=model.cfg.d_in,
                                    max_clips=model.cfg.max_clips)
        out = []
        for x in X:
            enc = encode(x, model)
            if enc.scores is None:
                raise NotFittedError("captioner was trained without the keyframe gate")
            idx = select_keyframes(enc.scores.data, self.delta)
            out.append(x[idx])
        return out
