"""Dense feature extractor standing in for a CNN backbone.

Parameters live in one flat float64 vector so that optimiser updates and the
virtual step ``theta - lr * grad`` are plain vector arithmetic. ``unpack``
returns views into that vector.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputShapeError, InvalidStateError


@dataclass
class BackboneConfig:
    input_dim: int
    hidden_dims: tuple = (64,)
    feature_dim: int = 256
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        dims = (self.input_dim, *self.hidden_dims, self.feature_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer widths must be >= 1, got {dims}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.feature_dim)


@dataclass
class BackboneCache:
    x: np.ndarray
    pre: list = field(default_factory=list)   # pre-activations per layer
    post: list = field(default_factory=list)  # layer inputs, post[0] = x
    n_params: int = 0


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(name, z):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    t = np.tanh(z)
    return 1.0 - t * t


class Backbone:
    """Multi-layer perceptron ``f(x; theta)`` with a linear output layer."""

    def __init__(self, config):
        self.config = config
        dims = config.layer_dims
        self.shapes = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            self.shapes.append(((fan_in, fan_out), (fan_out,)))
        self.n_params = sum(w[0] * w[1] + b[0] for w, b in self.shapes)

    @property
    def feature_dim(self):
        return self.config.feature_dim

    def init_params(self, seed=None):
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(self.config.init_seed if seed is None else seed)
        theta = np.zeros(self.n_params)
        for W, _ in self.unpack(theta):
            a = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
            W[...] = rng.uniform(-a, a, size=W.shape)
        return theta

    def unpack(self, theta):
        """Split a flat parameter vector into ``[(W, b), ...]`` views."""
        if theta.shape != (self.n_params,):
            raise InputShapeError(
                f"parameter vector has shape {theta.shape}, expected ({self.n_params},)"
            )
        layers, pos = [], 0
        for (wshape, bshape) in self.shapes:
            nw = wshape[0] * wshape[1]
            W = theta[pos:pos + nw].reshape(wshape)
            pos += nw
            b = theta[pos:pos + bshape[0]]
            pos += bshape[0]
            layers.append((W, b))
        return layers

    def forward(self, X, theta):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.config.input_dim:
            raise InputShapeError(
                f"input has {X.shape[-1]} features, backbone expects {self.config.input_dim}"
            )
        cache = BackboneCache(x=X, n_params=self.n_params)
        layers = self.unpack(theta)
        a = X
        for i, (W, b) in enumerate(layers):
            cache.post.append(a)
            z = a @ W + b
            cache.pre.append(z)
            a = z if i == len(layers) - 1 else _act(self.config.activation, z)
        return a, cache

    def _check_cache(self, cache, upstream_shape):
        if cache is None or cache.n_params != self.n_params or not cache.pre:
            raise InvalidStateError("backbone cache does not belong to this network")
        if upstream_shape != cache.pre[-1].shape:
            raise InvalidStateError(
                f"upstream gradient shape {upstream_shape} does not match cached "
                f"output {cache.pre[-1].shape}"
            )

    def backward(self, upstream, cache, theta):
        """Return ``(grad_theta, grad_x)`` for a scalar loss with ``dL/dF = upstream``."""
        upstream = np.asarray(upstream, dtype=np.float64)
        self._check_cache(cache, upstream.shape)
        layers = self.unpack(theta)
        grad = np.zeros(self.n_params)
        grads = self.unpack(grad)
        delta = upstream
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            gW, gb = grads[i]
            gW[...] = cache.post[i].T @ delta
            gb[...] = delta.sum(axis=0)
            delta = delta @ W.T
            if i > 0:
                delta = delta * _act_grad(self.config.activation, cache.pre[i - 1])
        return grad, delta

    def jvp(self, direction, cache, theta):
        """Directional derivative of the features along ``direction`` in parameter space.

        Forward-mode pass reusing the activations in ``cache``; returns an
        array shaped like the forward output.
        """
        if cache is None or cache.n_params != self.n_params or not cache.pre:
            raise InvalidStateError("backbone cache does not belong to this network")
        layers = self.unpack(theta)
        dirs = self.unpack(np.asarray(direction, dtype=np.float64))
        tangent = np.zeros_like(cache.x)
        for i, ((W, _), (dW, db)) in enumerate(zip(layers, dirs)):
            dz = tangent @ W + cache.post[i] @ dW + db
            if i < len(layers) - 1:
                tangent = dz * _act_grad(self.config.activation, cache.pre[i])
            else:
                tangent = dz
        return tangent
