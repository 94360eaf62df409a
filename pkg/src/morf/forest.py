"""Soft ordinal regression trees.

A forest of ``T`` complete binary trees of depth ``d`` shares one feature
vector ``f``. Split node ``n`` of tree ``t`` (breadth-first numbering) routes
left with probability ``sigmoid(f[eta[t, n]])``; leaves are numbered left to
right and store ordinal distributions ``leaves[t, l]`` of length ``K - 1``.

Everything is vectorised over samples and trees: features are ``(n, D)``,
leaf probabilities ``(n, T, L)``, tree outputs ``(n, T, K-1)``.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.isotonic import isotonic_regression

from .exceptions import ConfigurationError, InvalidStateError

LOSS_EPS = 1e-7
LEAF_EPS = 1e-6


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class Forest:
    depth: int
    eta: np.ndarray      # (T, 2**depth - 1) feature index per split node
    leaves: np.ndarray   # (T, 2**depth, K - 1)

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=np.int64)
        self.leaves = np.asarray(self.leaves, dtype=np.float64)
        if self.eta.ndim == 1:
            self.eta = self.eta[None, :]
        if self.leaves.ndim == 2:
            self.leaves = self.leaves[None]
        if self.depth < 1:
            raise ConfigurationError("tree depth must be >= 1")
        if self.eta.shape[1] != 2 ** self.depth - 1:
            raise ConfigurationError(
                f"depth {self.depth} needs {2 ** self.depth - 1} split nodes, eta has {self.eta.shape[1]}"
            )
        if self.leaves.shape[:2] != (self.eta.shape[0], 2 ** self.depth):
            raise ConfigurationError(
                f"leaf array {self.leaves.shape} inconsistent with {self.eta.shape[0]} trees of depth {self.depth}"
            )

    @property
    def n_trees(self):
        return self.eta.shape[0]

    @property
    def n_splits(self):
        return self.eta.shape[1]

    @property
    def n_leaves(self):
        return self.leaves.shape[1]

    @property
    def n_classes(self):
        return self.leaves.shape[2] + 1

    def with_assignment(self, eta):
        """Same leaves, different split-to-feature assignment."""
        return Forest(self.depth, eta, self.leaves)

    def validate(self, feature_dim):
        if self.eta.min() < 0 or self.eta.max() >= feature_dim:
            raise ConfigurationError(f"split assignment outside feature range 0..{feature_dim - 1}")
        if not np.all(np.isfinite(self.leaves)):
            raise ConfigurationError("leaf distributions contain non-finite values")
        if self.leaves.min() < 0 or self.leaves.max() > 1:
            raise ConfigurationError("leaf distributions must lie in [0, 1]")
        if np.any(np.diff(self.leaves, axis=-1) > 0):
            raise ConfigurationError("leaf distributions must be non-increasing")


def initial_leaves(n_trees, depth, n_classes):
    """Every entry 0.5 with a decreasing ``-0.01 * k`` jitter along thresholds."""
    row = 0.5 - 0.01 * np.arange(n_classes - 1)
    return np.broadcast_to(row, (n_trees, 2 ** depth, n_classes - 1)).copy()


def random_assignment(n_trees, n_splits, feature_dim, rng):
    """Per tree, distinct feature indices drawn uniformly without replacement."""
    if feature_dim < n_splits:
        raise ConfigurationError(
            f"feature_dim={feature_dim} is smaller than the {n_splits} split nodes per tree"
        )
    return np.stack([rng.choice(feature_dim, size=n_splits, replace=False) for _ in range(n_trees)])


def make_forest(n_trees, depth, feature_dim, n_classes, rng):
    eta = random_assignment(n_trees, 2 ** depth - 1, feature_dim, rng)
    return Forest(depth, eta, initial_leaves(n_trees, depth, n_classes))


@dataclass
class RouteCache:
    split_probs: np.ndarray   # (n, T, N)
    level_mass: list          # mass reaching each level, level_mass[i] has shape (n, T, 2**i)
    eta: np.ndarray
    feature_dim: int


def route(F, eta, depth):
    """Leaf-arrival probabilities ``mu[i, t, l]`` for every sample and tree."""
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    eta = np.atleast_2d(eta)
    s = sigmoid(F[:, eta])
    n, T = F.shape[0], eta.shape[0]
    mass = np.ones((n, T, 1))
    levels = [mass]
    for level in range(depth):
        start = 2 ** level - 1
        s_lvl = s[:, :, start:start + 2 ** level]
        mass = np.stack([mass * s_lvl, mass * (1.0 - s_lvl)], axis=-1).reshape(n, T, -1)
        levels.append(mass)
    return mass, RouteCache(s, levels, eta, F.shape[1])


def tree_predict(mu, leaves):
    """Per-tree ordinal distributions ``g = sum_l mu_l * pi_l``."""
    return np.einsum("ntl,tlk->ntk", mu, leaves)


def forest_predict(F, forest):
    """Unweighted average of tree outputs; returns ``(forest_out, tree_outs)``."""
    mu, _ = route(F, forest.eta, forest.depth)
    g = tree_predict(mu, forest.leaves)
    return g.mean(axis=1), g


def tree_loss(g, o):
    """Summed binary cross-entropy over thresholds, ``(n, T)``.

    ``o`` is ``(n, K-1)`` and broadcast over trees.
    """
    gc = np.clip(g, LOSS_EPS, 1.0 - LOSS_EPS)
    o = np.asarray(o, dtype=np.float64)
    if o.ndim == g.ndim - 1:
        o = o[:, None, :]
    return -np.sum(o * np.log(gc) + (1.0 - o) * np.log1p(-gc), axis=-1)


def tree_loss_grad(g, o):
    """``dR/dg``; zero where the clamp is active."""
    o = np.asarray(o, dtype=np.float64)
    if o.ndim == g.ndim - 1:
        o = o[:, None, :]
    inside = (g > LOSS_EPS) & (g < 1.0 - LOSS_EPS)
    gc = np.clip(g, LOSS_EPS, 1.0 - LOSS_EPS)
    return np.where(inside, (gc - o) / (gc * (1.0 - gc)), 0.0)


def split_node_gradients(dg, cache, leaves):
    """Gradient of a scalar loss wrt each split pre-activation, ``(n, T, N)``.

    ``dg`` is the loss gradient wrt tree outputs ``(n, T, K-1)``.
    """
    n, T = cache.split_probs.shape[:2]
    if dg.shape[:2] != (n, T) or leaves.shape[0] != T:
        raise InvalidStateError(
            f"gradient of shape {dg.shape} does not match cached routing for {n} samples, {T} trees"
        )
    s = cache.split_probs
    dmass = np.einsum("ntk,tlk->ntl", dg, leaves)
    ds = np.empty_like(s)
    for level in range(len(cache.level_mass) - 2, -1, -1):
        parent = cache.level_mass[level]
        start, width = 2 ** level - 1, 2 ** level
        s_lvl = s[:, :, start:start + width]
        d = dmass.reshape(n, T, width, 2)
        ds[:, :, start:start + width] = (d[..., 0] - d[..., 1]) * parent
        dmass = d[..., 0] * s_lvl + d[..., 1] * (1.0 - s_lvl)
    return ds * s * (1.0 - s)


def scatter_features(dz, eta, feature_dim):
    """Accumulate per-node gradients into the shared feature vector, ``(n, D)``."""
    dF = np.zeros((dz.shape[0], feature_dim))
    for t in range(eta.shape[0]):
        np.add.at(dF, (slice(None), eta[t]), dz[:, t, :])
    return dF


def split_gradients(dg, cache, leaves):
    """Gradient wrt the feature vector of a scalar loss with ``dL/dg = dg``."""
    dz = split_node_gradients(dg, cache, leaves)
    return scatter_features(dz, cache.eta, cache.feature_dim)


def project_monotone(rows):
    """Euclidean projection of each row onto non-increasing vectors in [0, 1]."""
    rows = np.asarray(rows, dtype=np.float64)
    flat = rows.reshape(-1, rows.shape[-1])
    out = np.empty_like(flat)
    for i, r in enumerate(flat):
        out[i] = isotonic_regression(r, increasing=False)
    # clipping an isotonic fit to a box keeps it optimal for the box-constrained problem
    return np.clip(out, 0.0, 1.0).reshape(rows.shape)


def threshold_loglik(mu, o, leaves):
    """Batch log-likelihood per tree and threshold, ``(T, K-1)``."""
    g = np.clip(tree_predict(mu, leaves), 1e-300, 1.0 - 1e-16)
    o = o[:, None, :]
    return np.sum(np.where(o > 0.5, np.log(g), np.log1p(-g)), axis=0)


def update_leaf_distributions(mu, o, leaves, sweeps=20, track=False, eps=LEAF_EPS):
    """Fixed-point (EM) refit of leaf distributions with routing held fixed.

    ``mu`` is ``(n, T, L)`` from :func:`route`, ``o`` the ``(n, K-1)``
    encodings. After ``sweeps`` multiplicative updates each row is projected
    onto the monotone set and kept ``eps`` away from 0 and 1. Leaves that no
    sample reaches are left unchanged.

    With ``track=True`` also returns the pre-projection log-likelihood
    trajectory, shape ``(sweeps + 1, T, K-1)``.
    """
    o = np.asarray(o, dtype=np.float64)
    pi = np.asarray(leaves, dtype=np.float64).copy()
    reach = mu.sum(axis=0)                   # (T, L)
    live = (reach > 1e-12)[:, :, None]
    history = [threshold_loglik(mu, o, pi)] if track else None
    for _ in range(sweeps):
        g = tree_predict(mu, pi)             # (n, T, K-1)
        pos = o[:, None, :] / np.maximum(g, 1e-300)
        neg = (1.0 - o[:, None, :]) / np.maximum(1.0 - g, 1e-300)
        a = pi * np.einsum("ntl,ntk->tlk", mu, pos)
        b = (1.0 - pi) * np.einsum("ntl,ntk->tlk", mu, neg)
        denom = a + b
        ok = live & (denom > 0)
        pi = np.where(ok, a / np.where(ok, denom, 1.0), pi)
        if track:
            history.append(threshold_loglik(mu, o, pi))
    pi = np.clip(project_monotone(pi), eps, 1.0 - eps)
    if track:
        return pi, np.array(history)
    return pi
