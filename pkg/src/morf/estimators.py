"""Scikit-learn compatible estimators wrapping the training engines."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import forest as fst
from .exceptions import InputShapeError
from .meta import TrainConfig, fit_dorf, fit_morf
from .metrics import tree_variance
from .ordinal import class_probabilities, decode_distribution, expected_rank

_CONFIG_FIELDS = set(TrainConfig.__dataclass_fields__)


class _OrdinalForestBase(TransformerMixin, ClassifierMixin, BaseEstimator):
    """Shared inference code; subclasses choose the training engine."""

    _engine = None
    _weighted = True

    def _train_config(self):
        params = {k: v for k, v in self.get_params().items() if k in _CONFIG_FIELDS}
        params["seed"] = self.random_state
        return TrainConfig(**params)

    def _resolve_classes(self, y):
        if self.n_classes is None:
            classes = np.unique(y)
        else:
            classes = np.arange(1, self.n_classes + 1)
            unknown = np.setdiff1d(np.unique(y), classes)
            if unknown.size:
                raise ValueError(f"labels {unknown.tolist()} are outside 1..{self.n_classes}")
        if classes.size < 2:
            raise ValueError("need at least two ordered classes")
        return classes

    def fit(self, X, y, callback=None):
        """Fit on features ``X`` and ordered labels ``y``.

        Labels are ranked by sorting unless ``n_classes`` is given, in which
        case they must already be ranks ``1..n_classes``.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = self._resolve_classes(y)
        ranks = np.searchsorted(self.classes_, y) + 1
        self.n_features_in_ = X.shape[1]
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            scale = X.std(axis=0)
            self.scale_ = np.where(scale > 0, scale, 1.0)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        config = self._train_config()
        state, log = type(self)._engine(
            (X - self.mean_) / self.scale_, ranks, len(self.classes_), config, callback=callback
        )
        self.state_ = state
        self.log_ = log
        self.backbone_ = state.backbone
        self.theta_ = state.theta
        self.forest_ = state.forest
        self.phi_ = state.phi if self._weighted else None
        self.train_meta_ = {"seed": config.seed, "config_hash": config.digest(), "epochs_run": state.epoch}
        return self

    @property
    def n_classes_(self):
        return len(self.classes_)

    def _features(self, X):
        check_is_fitted(self, "theta_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise InputShapeError(
                f"X has {X.shape[1]} features, but the model was trained on {self.n_features_in_}"
            )
        F, _ = self.backbone_.forward((X - self.mean_) / self.scale_, self.theta_)
        return F

    def transform(self, X):
        """Backbone feature vectors, shape ``(n, feature_dim)``."""
        return self._features(X)

    def predict_tree_ordinal(self, X):
        """Per-tree ordinal distributions, ``(n, T, K-1)``."""
        _, g = fst.forest_predict(self._features(X), self.forest_)
        return g

    def predict_ordinal(self, X):
        """Forest ordinal distribution (uniform tree average), ``(n, K-1)``."""
        return self.predict_tree_ordinal(X).mean(axis=1)

    def predict_proba(self, X):
        return class_probabilities(self.predict_ordinal(X))

    def predict_rank(self, X):
        return decode_distribution(self.predict_ordinal(X))

    def predict(self, X):
        check_is_fitted(self, "theta_")
        return self.classes_[self.predict_rank(X) - 1]

    def expected_rank(self, X):
        return expected_rank(self.predict_ordinal(X))

    def tree_ranks(self, X, discrete=False):
        """Per-tree ranks ``(n, T)``: expected ranks, or decoded classes if ``discrete``."""
        g = self.predict_tree_ordinal(X)
        return (decode_distribution(g) if discrete else expected_rank(g)).astype(np.float64)

    def tree_variance(self, X, discrete=False):
        """Per-sample spread of tree predictions around their mean."""
        return tree_variance(self.tree_ranks(X, discrete=discrete))


class MORFClassifier(_OrdinalForestBase):
    """Meta ordinal regression forest.

    Soft ordinal trees over a learned feature extractor, trained with
    per-tree loss weights from a small weighting network whose parameters are
    meta-learned through grouped-feature-selection forests. At prediction
    time trees are averaged uniformly and the weighting network is unused.

    Parameters
    ----------
    n_trees, depth : int
        Forest size; each tree has ``2**depth - 1`` split nodes.
    hidden_dims, feature_dim, activation :
        Feature extractor layout ``input -> hidden_dims -> feature_dim``.
    weight_hidden : int
        Hidden width of each tree's weighting network.
    learning_rate, lr_decay, lr_decay_every, batch_size, weight_decay, optimizer :
        Outer optimiser; the rate is multiplied by ``lr_decay`` every
        ``lr_decay_every`` epochs.
    meta_lr : float or None
        Step size for the weighting network (``None``: ``learning_rate``).
    virtual_lr : float or None
        Step size of the look-ahead step (``None``: the scheduled rate).
    meta_batch : {"same", "random"}
    weight_grad : {"full", "truncated"}
        Whether the backbone gradient includes the path through the weight's
        dependence on the loss.
    epochs, leaf_update_sweeps, leaf_update_samples :
        Training length and the per-epoch leaf refit.
    standardize : bool
        z-score features with training statistics.
    n_classes : int or None
        If given, labels are ranks ``1..n_classes``.
    random_state : int
    """

    _engine = staticmethod(fit_morf)

    def __init__(
        self,
        n_trees=5,
        depth=3,
        hidden_dims=(64,),
        feature_dim=256,
        activation="relu",
        weight_hidden=100,
        learning_rate=0.001,
        lr_decay=0.1,
        lr_decay_every=80,
        batch_size=16,
        weight_decay=0.0001,
        optimizer="adam",
        meta_lr=None,
        virtual_lr=None,
        meta_batch="same",
        weight_grad="full",
        use_gfs=True,
        epochs=30,
        leaf_update_sweeps=20,
        leaf_update_samples=None,
        standardize=True,
        n_classes=None,
        random_state=0,
    ):
        self.n_trees = n_trees
        self.depth = depth
        self.hidden_dims = hidden_dims
        self.feature_dim = feature_dim
        self.activation = activation
        self.weight_hidden = weight_hidden
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.optimizer = optimizer
        self.meta_lr = meta_lr
        self.virtual_lr = virtual_lr
        self.meta_batch = meta_batch
        self.weight_grad = weight_grad
        self.use_gfs = use_gfs
        self.epochs = epochs
        self.leaf_update_sweeps = leaf_update_sweeps
        self.leaf_update_samples = leaf_update_samples
        self.standardize = standardize
        self.n_classes = n_classes
        self.random_state = random_state


class DORFClassifier(_OrdinalForestBase):
    """Deep ordinal regression forest baseline: fixed random splits, equal tree weights."""

    _engine = staticmethod(fit_dorf)
    _weighted = False

    def __init__(
        self,
        n_trees=5,
        depth=3,
        hidden_dims=(64,),
        feature_dim=256,
        activation="relu",
        learning_rate=0.001,
        lr_decay=0.1,
        lr_decay_every=80,
        batch_size=16,
        weight_decay=0.0001,
        optimizer="adam",
        epochs=30,
        leaf_update_sweeps=20,
        leaf_update_samples=None,
        standardize=True,
        n_classes=None,
        random_state=0,
    ):
        self.n_trees = n_trees
        self.depth = depth
        self.hidden_dims = hidden_dims
        self.feature_dim = feature_dim
        self.activation = activation
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.optimizer = optimizer
        self.epochs = epochs
        self.leaf_update_sweeps = leaf_update_sweeps
        self.leaf_update_samples = leaf_update_samples
        self.standardize = standardize
        self.n_classes = n_classes
        self.random_state = random_state
