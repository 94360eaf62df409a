"""Tree-wise weighting network.

One independent ``1 -> H -> 1`` network per tree maps that tree's loss to a
weight in (0, 1): ``V_t(R) = sigmoid(w2 . relu(w1 * R + b1) + b2)``. The
parameters of all trees are rows of a ``(T, 3H + 1)`` matrix laid out as
``[w1 | b1 | w2 | b2]``.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InputShapeError, InvalidStateError

_LO = np.finfo(np.float64).tiny
_HI = 1.0 - np.finfo(np.float64).epsneg


def open_sigmoid(z):
    """Sigmoid kept strictly inside (0, 1) even where float64 would round to 0 or 1."""
    return np.clip(np.exp(-np.logaddexp(0.0, -z)), _LO, _HI)


@dataclass
class WeightNetCache:
    loss: np.ndarray     # (n, T)
    pre: np.ndarray      # (n, T, H) hidden pre-activation
    out: np.ndarray      # (n, T) weights
    n_params: int


class WeightNet:
    def __init__(self, n_trees, hidden=100):
        self.n_trees = int(n_trees)
        self.hidden = int(hidden)
        self.n_params = 3 * self.hidden + 1

    def init_params(self, rng, tied=True):
        """Glorot-uniform weights, zero biases.

        With ``tied`` every tree starts from the same draw, so no tree is
        favoured before the first meta step.
        """
        H = self.hidden
        rows = 1 if tied else self.n_trees
        phi = np.zeros((rows, self.n_params))
        a1 = np.sqrt(6.0 / (1 + H))
        phi[:, :H] = rng.uniform(-a1, a1, size=(rows, H))
        phi[:, 2 * H:3 * H] = rng.uniform(-a1, a1, size=(rows, H))
        return np.repeat(phi, self.n_trees // rows, axis=0)

    def split(self, phi):
        H = self.hidden
        if phi.shape != (self.n_trees, self.n_params):
            raise InputShapeError(
                f"weight-net parameters have shape {phi.shape}, expected {(self.n_trees, self.n_params)}"
            )
        return phi[:, :H], phi[:, H:2 * H], phi[:, 2 * H:3 * H], phi[:, 3 * H]

    def weight(self, loss, phi):
        """Weights for a ``(n, T)`` loss matrix; column ``t`` goes through ``V_t``."""
        loss = np.asarray(loss, dtype=np.float64)
        if loss.ndim == 1:
            loss = loss[None, :]
        if loss.shape[-1] != self.n_trees:
            raise InputShapeError(f"expected losses for {self.n_trees} trees, got {loss.shape[-1]}")
        if not np.all(np.isfinite(loss)):
            raise ValueError("tree losses must be finite")
        w1, b1, w2, b2 = self.split(phi)
        pre = loss[..., None] * w1 + b1
        z = np.einsum("nth,th->nt", np.maximum(pre, 0.0), w2) + b2
        out = open_sigmoid(z)
        return out, WeightNetCache(loss, pre, out, self.n_params)

    def _check(self, cache, shape):
        if cache is None or cache.n_params != self.n_params or cache.out.shape != shape:
            raise InvalidStateError("weight-net cache does not match this call")

    def weight_gradients(self, upstream, cache, phi):
        """Return ``(dphi, dloss)`` for a scalar with ``dL/dw = upstream``."""
        upstream = np.asarray(upstream, dtype=np.float64)
        self._check(cache, upstream.shape)
        w1, _, w2, _ = self.split(phi)
        H = self.hidden
        dz = upstream * cache.out * (1.0 - cache.out)           # (n, T)
        mask = (cache.pre > 0).astype(np.float64)
        hidden = cache.pre * mask
        dpre = dz[..., None] * w2 * mask                          # (n, T, H)
        dphi = np.empty((self.n_trees, self.n_params))
        dphi[:, :H] = np.einsum("nth,nt->th", dpre, cache.loss)
        dphi[:, H:2 * H] = dpre.sum(axis=0)
        dphi[:, 2 * H:3 * H] = np.einsum("nt,nth->th", dz, hidden)
        dphi[:, 3 * H] = dz.sum(axis=0)
        dloss = np.einsum("nth,th->nt", dpre, w1)
        return dphi, dloss

    def input_slope(self, cache, phi):
        """``dV_t/dR`` evaluated at the cached losses."""
        w1, _, w2, _ = self.split(phi)
        mask = cache.pre > 0
        q = np.einsum("nth,th->nt", mask * w1, w2)
        return cache.out * (1.0 - cache.out) * q

    def mixed_gradients(self, coef, cache, phi, full=True):
        """``sum_i coef[i, t] * dH/dphi_t`` with ``H = V + R dV/dR`` (or ``H = V``).

        ``H`` is the factor multiplying ``dR/dtheta`` in the gradient of the
        weighted loss ``V(R) * R``, so this is the mixed second derivative
        needed to differentiate a weighted gradient step with respect to the
        weight-net parameters.
        """
        coef = np.asarray(coef, dtype=np.float64)
        self._check(cache, coef.shape)
        w1, _, w2, _ = self.split(phi)
        H = self.hidden
        R = cache.loss[..., None]
        s = cache.out[..., None]
        s1 = s * (1.0 - s)
        mask = (cache.pre > 0).astype(np.float64)
        hidden = cache.pre * mask
        c = coef[..., None]
        if full:
            s2 = s1 * (1.0 - 2.0 * s)
            q = np.sum(mask * w1 * w2, axis=-1, keepdims=True)
            u = s1 + R * s2 * q
            g_w1 = w2 * mask * R * (u + s1)
            g_b1 = w2 * mask * u
            g_w2 = hidden * u + R * s1 * mask * w1
            g_b2 = u[..., 0]
        else:
            g_w1 = s1 * w2 * mask * R
            g_b1 = s1 * w2 * mask
            g_w2 = s1 * hidden
            g_b2 = s1[..., 0]
        out = np.empty((self.n_trees, self.n_params))
        out[:, :H] = np.sum(c * g_w1, axis=0)
        out[:, H:2 * H] = np.sum(c * g_b1, axis=0)
        out[:, 2 * H:3 * H] = np.sum(c * g_w2, axis=0)
        out[:, 3 * H] = np.sum(coef * g_b2, axis=0)
        return out
