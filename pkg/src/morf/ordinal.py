"""Ordinal label space: threshold encodings and decoding of ordinal distributions.

Ranks are 1-based (``1..K``). An encoding of rank ``y`` is the binary vector
``o`` of length ``K - 1`` with ``o[k] = 1`` iff ``y > k + 1``; the model emits a
real-valued analogue of ``o`` which is decoded by counting thresholds above 0.5.
"""

import numpy as np

CLASS_NAMES = {1: "benign", 2: "unsure", 3: "malignant"}


def _check_ranks(ranks, n_classes):
    if n_classes < 2:
        raise ValueError(f"need at least 2 ordered classes, got K={n_classes}")
    ranks = np.asarray(ranks)
    if ranks.size and (ranks.min() < 1 or ranks.max() > n_classes):
        raise ValueError(f"ranks must lie in 1..{n_classes}")
    return ranks.astype(np.int64)


def encode_label(y, n_classes):
    """Encode rank(s) ``y`` as monotone threshold vectors.

    Works on a scalar rank (returns shape ``(K-1,)``) or an array of ranks
    (returns shape ``(n, K-1)``).

    >>> encode_label(2, 3)
    array([1., 0.])
    """
    ranks = _check_ranks(y, n_classes)
    thresholds = np.arange(1, n_classes)
    return (ranks[..., None] > thresholds).astype(np.float64)


def decode_distribution(probs):
    """Map ordinal distribution(s) to ranks: ``1 + #{k : probs[k] > 0.5}``."""
    probs = np.asarray(probs, dtype=np.float64)
    return 1 + np.sum(probs > 0.5, axis=-1)


def expected_rank(probs):
    """Continuous rank ``1 + sum_k probs[k]``, lying in ``[1, K]``."""
    probs = np.asarray(probs, dtype=np.float64)
    return 1.0 + np.sum(probs, axis=-1)


def class_probabilities(probs):
    """Per-class probabilities from exceedance probabilities.

    ``P(y = r_k) = P(y > r_{k-1}) - P(y > r_k)`` with the conventions
    ``P(y > r_0) = 1`` and ``P(y > r_K) = 0``. Non-monotone inputs give
    negative differences; those are clipped and the row renormalised.
    """
    probs = np.asarray(probs, dtype=np.float64)
    shape = probs.shape[:-1] + (1,)
    padded = np.concatenate([np.ones(shape), probs, np.zeros(shape)], axis=-1)
    out = np.clip(padded[..., :-1] - padded[..., 1:], 0.0, None)
    return out / out.sum(axis=-1, keepdims=True)


def is_monotone(probs, atol=0.0):
    """True where each row is non-increasing (within ``atol``)."""
    probs = np.asarray(probs, dtype=np.float64)
    return np.all(np.diff(probs, axis=-1) <= atol, axis=-1)
