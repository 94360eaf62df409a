"""Training engines for meta ordinal regression forests and the plain baseline.

One MORF iteration on a mini-batch:

1. forward the batch through the backbone and the training forest;
2. draw a grouped-feature-selection (GFS) assignment for the meta forest;
3. virtual step ``theta' = theta - lr * grad L_tr(theta; phi)``;
4. meta step on ``phi`` using the exact gradient of the meta loss at
   ``theta'`` (a mixed second derivative, computed with one JVP);
5. actual optimiser step on ``theta`` with the refreshed weights.

Leaf distributions are refit once per epoch. The baseline runs the same loop
with unit tree weights and steps 2-4 skipped.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import forest as fst
from .backbone import Backbone, BackboneConfig
from .exceptions import ConfigurationError, NumericalError
from .gfs import gfs_assignment
from .metrics import tree_variance
from .ordinal import encode_label, expected_rank
from .twwnet import WeightNet

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    n_trees: int = 5
    depth: int = 3
    hidden_dims: tuple = (64,)
    feature_dim: int = 256
    activation: str = "relu"
    weight_hidden: int = 100
    learning_rate: float = 0.001
    lr_decay: float = 0.1
    lr_decay_every: int = 80
    batch_size: int = 16
    weight_decay: float = 0.0001
    optimizer: str = "adam"
    meta_lr: float = None           # defaults to learning_rate
    virtual_lr: float = None        # defaults to the scheduled learning rate
    meta_batch: str = "same"        # "same" or "random"
    weight_grad: str = "full"       # "full" product rule or "truncated"
    use_meta: bool = True
    use_gfs: bool = True
    unit_weights: bool = False
    epochs: int = 30
    seed: int = 0
    leaf_update_sweeps: int = 20
    leaf_update_samples: int = None  # None: whole training set

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        for name in ("learning_rate", "lr_decay", "batch_size", "n_trees", "depth", "lr_decay_every"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.weight_decay < 0 or self.epochs < 0 or self.leaf_update_sweeps < 0:
            raise ConfigurationError("weight_decay, epochs and leaf_update_sweeps must be >= 0")
        if self.meta_lr is not None and self.meta_lr < 0:
            raise ConfigurationError("meta_lr must be >= 0")
        if self.virtual_lr is not None and self.virtual_lr < 0:
            raise ConfigurationError("virtual_lr must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.meta_batch not in ("same", "random"):
            raise ConfigurationError(f"meta_batch must be 'same' or 'random', got {self.meta_batch!r}")
        if self.weight_grad not in ("full", "truncated"):
            raise ConfigurationError(f"weight_grad must be 'full' or 'truncated', got {self.weight_grad!r}")
        if self.feature_dim < 2 ** self.depth - 1:
            raise ConfigurationError(
                f"feature_dim={self.feature_dim} is smaller than the {2 ** self.depth - 1} split nodes per tree"
            )

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    def digest(self):
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def scheduled_lr(config, epoch):
    """Step decay: ``lr * decay ** floor(epoch / every)``."""
    return config.learning_rate * config.lr_decay ** (epoch // config.lr_decay_every)


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, size, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params, grad, lr):
        grad = grad + self.weight_decay * params
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, size, weight_decay=0.0):
        self.weight_decay = weight_decay

    def step(self, params, grad, lr):
        return params - lr * (grad + self.weight_decay * params)


@dataclass
class TrainState:
    backbone: Backbone
    theta: np.ndarray
    forest: fst.Forest
    weight_net: WeightNet
    phi: np.ndarray
    optimizer: object
    config: TrainConfig
    n_classes: int
    epoch: int = 0
    iteration: int = 0
    rngs: dict = field(default_factory=dict)

    def check_finite(self, where):
        for name, arr in (("theta", self.theta), ("phi", self.phi), ("leaves", self.forest.leaves)):
            if not np.all(np.isfinite(arr)):
                raise NumericalError(
                    f"non-finite {name} after {where} (epoch {self.epoch}, iteration {self.iteration})"
                )


def init_state(input_dim, n_classes, config):
    seeds = np.random.SeedSequence(config.seed).spawn(5)
    rngs = dict(zip(("init", "forest", "shuffle", "gfs", "phi"), (np.random.default_rng(s) for s in seeds)))
    bconf = BackboneConfig(
        input_dim=input_dim,
        hidden_dims=config.hidden_dims,
        feature_dim=config.feature_dim,
        activation=config.activation,
        init_seed=int(rngs["init"].integers(2 ** 31)),
    )
    backbone = Backbone(bconf)
    theta = backbone.init_params()
    forest = fst.make_forest(config.n_trees, config.depth, config.feature_dim, n_classes, rngs["forest"])
    wnet = WeightNet(config.n_trees, config.weight_hidden)
    phi = wnet.init_params(rngs["phi"])
    opt_cls = Adam if config.optimizer == "adam" else SGD
    return TrainState(
        backbone=backbone,
        theta=theta,
        forest=forest,
        weight_net=wnet,
        phi=phi,
        optimizer=opt_cls(backbone.n_params, config.weight_decay),
        config=config,
        n_classes=n_classes,
        rngs=rngs,
    )


@dataclass
class BatchPass:
    F: np.ndarray
    bcache: object
    mu: np.ndarray
    rcache: object
    g: np.ndarray
    R: np.ndarray


def forward_pass(backbone, theta, forest, X, o):
    F, bcache = backbone.forward(X, theta)
    mu, rcache = fst.route(F, forest.eta, forest.depth)
    g = fst.tree_predict(mu, forest.leaves)
    return BatchPass(F, bcache, mu, rcache, g, fst.tree_loss(g, o))


@dataclass
class TrainLoss:
    value: float
    grad: np.ndarray
    weights: np.ndarray
    weight_cache: object
    batch: BatchPass


def weighted_train_loss(backbone, theta, forest, wnet, phi, X, o, unit_weights=False, full=True, batch=None):
    """Weighted loss ``mean_{i,t} V_t(R_ti) * R_ti`` and its gradient wrt ``theta``.

    ``full`` keeps the dependence of the weight on the loss in the gradient
    (product rule); otherwise the weights are treated as constants.
    """
    bp = batch if batch is not None else forward_pass(backbone, theta, forest, X, o)
    n, T = bp.R.shape
    if unit_weights:
        V, wcache = np.ones_like(bp.R), None
        coef = V
    else:
        V, wcache = wnet.weight(bp.R, phi)
        coef = V + bp.R * wnet.input_slope(wcache, phi) if full else V
    value = float(np.mean(V * bp.R))
    dg = (coef / (n * T))[..., None] * fst.tree_loss_grad(bp.g, o)
    dF = fst.split_gradients(dg, bp.rcache, forest.leaves)
    grad, _ = backbone.backward(dF, bp.bcache, theta)
    return TrainLoss(value, grad, V, wcache, bp)


def virtual_step(train_loss, theta, lr):
    """One plain gradient step; ``theta`` itself is not modified."""
    if not np.all(np.isfinite(train_loss.grad)):
        raise NumericalError("non-finite training gradient in virtual step")
    return theta - lr * train_loss.grad


def meta_loss_grad(backbone, theta, forest, X, o):
    """Unweighted mean tree loss and its gradient wrt ``theta``."""
    bp = forward_pass(backbone, theta, forest, X, o)
    n, T = bp.R.shape
    dg = fst.tree_loss_grad(bp.g, o) / (n * T)
    dF = fst.split_gradients(dg, bp.rcache, forest.leaves)
    grad, _ = backbone.backward(dF, bp.bcache, theta)
    return float(np.mean(bp.R)), grad


def meta_gradient(backbone, theta, forest, meta_forest, wnet, phi, X, o, Xm, om, lr, full=True, train_loss=None):
    """Exact ``d/dphi`` of the meta loss evaluated after one virtual step.

    With ``theta' = theta - lr * (1/nT) sum_{i,t} H_ti grad R_ti`` and
    ``H = V + R dV/dR``, the chain rule gives
    ``-lr/(nT) sum_{i,t} <grad R_ti, grad L_meta(theta')> dH_ti/dphi_t``.
    The inner products come from a single forward-mode pass through the
    backbone. Returns ``(meta_loss, dphi, theta')``.
    """
    tl = train_loss or weighted_train_loss(backbone, theta, forest, wnet, phi, X, o, full=full)
    theta_v = virtual_step(tl, theta, lr)
    meta_loss, g_meta = meta_loss_grad(backbone, theta_v, meta_forest, Xm, om)
    bp = tl.batch
    n, T = bp.R.shape
    tangent = backbone.jvp(g_meta, bp.bcache, theta)
    dz = fst.split_node_gradients(fst.tree_loss_grad(bp.g, o), bp.rcache, forest.leaves)
    coef = np.sum(dz * tangent[:, forest.eta], axis=-1)
    dphi = -lr / (n * T) * wnet.mixed_gradients(coef, tl.weight_cache, phi, full=full)
    if not np.all(np.isfinite(dphi)):
        raise NumericalError("non-finite meta gradient")
    return meta_loss, dphi, theta_v


def actual_step(state, X, o, lr, batch=None):
    """Optimiser update of ``theta`` on the weighted loss with the current ``phi``."""
    cfg = state.config
    tl = weighted_train_loss(
        state.backbone, state.theta, state.forest, state.weight_net, state.phi, X, o,
        unit_weights=cfg.unit_weights, full=cfg.weight_grad == "full", batch=batch,
    )
    if not np.all(np.isfinite(tl.grad)):
        raise NumericalError(f"non-finite training gradient at iteration {state.iteration}")
    state.theta = state.optimizer.step(state.theta, tl.grad, lr)
    return tl


def refit_leaves(state, X, o):
    cfg = state.config
    if cfg.leaf_update_sweeps == 0:
        return
    if cfg.leaf_update_samples is not None and cfg.leaf_update_samples < X.shape[0]:
        idx = np.sort(state.rngs["shuffle"].choice(X.shape[0], cfg.leaf_update_samples, replace=False))
        X, o = X[idx], o[idx]
    F, _ = state.backbone.forward(X, state.theta)
    mu, _ = fst.route(F, state.forest.eta, state.forest.depth)
    state.forest.leaves = fst.update_leaf_distributions(mu, o, state.forest.leaves, cfg.leaf_update_sweeps)


def train_iteration(state, X, o, X_all=None, o_all=None):
    """One iteration; returns the log record."""
    cfg = state.config
    lr = scheduled_lr(cfg, state.epoch)
    full = cfg.weight_grad == "full"
    bp = forward_pass(state.backbone, state.theta, state.forest, X, o)
    meta_loss = float("nan")
    if cfg.use_meta and not cfg.unit_weights:
        if cfg.use_gfs:
            eta_meta = gfs_assignment(bp.F, state.forest.n_splits, state.forest.n_trees, state.rngs["gfs"])
            meta_forest = state.forest.with_assignment(eta_meta)
        else:
            meta_forest = state.forest
        if cfg.meta_batch == "random" and X_all is not None:
            idx = state.rngs["gfs"].choice(X_all.shape[0], size=min(cfg.batch_size, X_all.shape[0]), replace=False)
            Xm, om = X_all[idx], o_all[idx]
        else:
            Xm, om = X, o
        vlr = lr if cfg.virtual_lr is None else cfg.virtual_lr
        meta_lr = cfg.learning_rate if cfg.meta_lr is None else cfg.meta_lr
        tl = weighted_train_loss(
            state.backbone, state.theta, state.forest, state.weight_net, state.phi, X, o, full=full, batch=bp
        )
        meta_loss, dphi, _ = meta_gradient(
            state.backbone, state.theta, state.forest, meta_forest, state.weight_net, state.phi,
            X, o, Xm, om, vlr, full=full, train_loss=tl,
        )
        state.phi = state.phi - meta_lr * dphi
    tl = actual_step(state, X, o, lr, batch=bp)
    state.iteration += 1
    state.check_finite("actual step")
    ranks = expected_rank(bp.g)
    return {
        "epoch": state.epoch,
        "iteration": state.iteration,
        "lr": lr,
        "train_loss": tl.value,
        "meta_loss": meta_loss,
        "tree_weights": tl.weights.mean(axis=0),
        "tree_variance": float(np.mean(tree_variance(ranks))),
    }


def run_training(X, y, n_classes, config, state=None, callback=None):
    """Train for ``config.epochs`` epochs on features ``X`` and ranks ``y`` (1..K)."""
    X = np.asarray(X, dtype=np.float64)
    o = encode_label(np.asarray(y), n_classes)
    if X.shape[0] == 0:
        raise ConfigurationError("training set is empty")
    if state is None:
        state = init_state(X.shape[1], n_classes, config)
    log = []
    n = X.shape[0]
    if config.epochs > 0 and state.iteration == 0:
        # identical initial leaves make every tree output routing-independent,
        # so theta gets no gradient until the leaves are fitted once
        refit_leaves(state, X, o)
    for _ in range(config.epochs):
        order = state.rngs["shuffle"].permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            rec = train_iteration(state, X[idx], o[idx], X, o)
            log.append(rec)
            if callback is not None:
                callback(rec)
        refit_leaves(state, X, o)
        state.check_finite("leaf update")
        logger.debug("epoch %d done, last train loss %.6f", state.epoch, log[-1]["train_loss"])
        state.epoch += 1
    return state, log


def fit_morf(X, y, n_classes, config=None, callback=None):
    config = config or TrainConfig()
    return run_training(X, y, n_classes, config, callback=callback)


def fit_dorf(X, y, n_classes, config=None, callback=None):
    """Baseline: equal tree weights, no virtual/meta step, no GFS."""
    config = replace(config or TrainConfig(), unit_weights=True, use_meta=False, use_gfs=False)
    return run_training(X, y, n_classes, config, callback=callback)
