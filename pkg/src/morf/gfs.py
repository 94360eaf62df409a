"""Grouped feature selection: re-sample split assignments from ranked feature groups."""

import numpy as np

from .exceptions import ConfigurationError


def feature_statistics(F):
    """Mean absolute activation of each feature coordinate over a batch."""
    return np.mean(np.abs(np.atleast_2d(F)), axis=0)


def partition_features(stats, n_groups):
    """Sort coordinates by ``stats`` (descending, ties by index) and slice into groups.

    Group sizes differ by at most one; the first ``D % n_groups`` groups hold
    the extra element. Returns a list of index arrays, highest group first.
    """
    stats = np.asarray(stats, dtype=np.float64)
    D = stats.shape[0]
    if not 1 <= n_groups <= D:
        raise ConfigurationError(f"cannot split {D} features into {n_groups} groups")
    if not np.all(np.isfinite(stats)):
        raise ConfigurationError("feature statistics must be finite")
    # stable sort on -stats keeps ascending index order among ties
    order = np.argsort(-stats, kind="stable")
    return np.array_split(order, n_groups)


def sample_assignment(groups, n_trees, rng):
    """Split node ``n`` of every tree draws one feature uniformly from ``groups[n]``.

    Returns an ``(n_trees, len(groups))`` integer array.
    """
    eta = np.empty((n_trees, len(groups)), dtype=np.int64)
    for n, group in enumerate(groups):
        eta[:, n] = group[rng.integers(0, len(group), size=n_trees)]
    return eta


def gfs_assignment(F, n_splits, n_trees, rng):
    """Partition from batch features ``F`` and draw a fresh meta assignment."""
    return sample_assignment(partition_features(feature_statistics(F), n_splits), n_trees, rng)
