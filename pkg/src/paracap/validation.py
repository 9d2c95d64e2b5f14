"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation


def check_feature_matrix(x, d_in=None, max_clips=None):
    """Validate one (L, d_in) clip-feature matrix; returns it as float64."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ContractViolation(
            f"expected a 2-D clip-feature matrix, got shape {arr.shape}")
    if d_in is not None and arr.shape[1] != d_in:
        raise ContractViolation(
            f"feature width {arr.shape[1]} does not match d_in={d_in}")
    if max_clips is not None and arr.shape[0] > max_clips:
        raise ContractViolation(
            f"{arr.shape[0]} clips exceed the configured maximum {max_clips}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("clip features contain NaN or Inf")
    return arr


def check_feature_sequences(xs, d_in=None, max_clips=None):
    if len(xs) == 0:
        raise ContractViolation("empty list of feature matrices")
    return [check_feature_matrix(x, d_in, max_clips) for x in xs]


def check_paragraphs(ys, n_expected=None):
    """Validate paragraphs as non-empty lists of string tokens."""
    if n_expected is not None and len(ys) != n_expected:
        raise ContractViolation(f"{len(ys)} paragraphs for {n_expected} videos")
    for y in ys:
        if len(y) == 0:
            raise ContractViolation("empty reference paragraph")
        if not all(isinstance(tok, str) for tok in y):
            raise ContractViolation("paragraph tokens must be strings")
    return [list(y) for y in ys]
