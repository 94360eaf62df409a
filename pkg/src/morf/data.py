"""Datasets: synthetic ordinal tasks, CSV input/output, score mapping, k-fold splits."""

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DataError

# benign / unsure / malignant counts in the reference nodule cohort
CLASS_COUNTS = (1108, 1007, 510)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray                 # ranks 1..K, or None for unlabeled feature files
    n_classes: int = 3
    scores: np.ndarray = None

    def __post_init__(self):
        if self.X.ndim != 2:
            raise DataError(f"feature matrix must be 2-D, got shape {self.X.shape}")
        if not np.all(np.isfinite(self.X)):
            raise DataError("feature matrix contains NaN or Inf")
        if self.y is not None:
            if self.y.shape != (self.X.shape[0],):
                raise DataError("label vector length does not match feature rows")
            if self.y.size and (self.y.min() < 1 or self.y.max() > self.n_classes):
                raise DataError(f"labels must lie in 1..{self.n_classes}")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    def subset(self, idx):
        return Dataset(
            self.X[idx],
            None if self.y is None else self.y[idx],
            self.n_classes,
            None if self.scores is None else self.scores[idx],
        )


def score_to_class(score):
    """Map averaged 1-5 ratings to ranks: <2.5 -> 1, [2.5, 3.5] -> 2, >3.5 -> 3."""
    score = np.asarray(score, dtype=np.float64)
    if np.any(~np.isfinite(score)) or np.any((score < 1) | (score > 5)):
        raise DataError("scores must lie in [1, 5]")
    ranks = np.where(score < 2.5, 1, np.where(score <= 3.5, 2, 3))
    return ranks if ranks.ndim else int(ranks)


@dataclass
class SynthConfig:
    n_samples: int = 2625
    input_dim: int = 32
    n_classes: int = 3
    noise: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigurationError("need at least 2 classes")
        if self.n_samples < self.n_classes:
            raise ConfigurationError(
                f"n_samples={self.n_samples} cannot cover {self.n_classes} classes"
            )
        if self.input_dim < 1:
            raise ConfigurationError("input_dim must be >= 1")
        if self.noise < 0:
            raise ConfigurationError("noise must be >= 0")


def class_sizes(n, n_classes):
    """Split ``n`` by the reference cohort ratio (K=3) or evenly, largest remainder."""
    ratio = np.array(CLASS_COUNTS if n_classes == 3 else [1] * n_classes, dtype=np.float64)
    exact = n * ratio / ratio.sum()
    sizes = np.floor(exact).astype(np.int64)
    order = np.argsort(-(exact - sizes), kind="stable")
    sizes[order[: n - sizes.sum()]] += 1
    if np.any(sizes == 0):
        sizes[sizes == 0] = 1
        sizes[np.argmax(sizes)] -= np.sum(sizes) - n
    return sizes


def synthesize(config):
    """Latent-projection ordinal task: ``z = u.x + noise``, classes by quantiles of ``z``."""
    rng = np.random.default_rng(config.seed)
    u = rng.standard_normal(config.input_dim)
    u /= np.linalg.norm(u)
    X = rng.standard_normal((config.n_samples, config.input_dim))
    z = X @ u + config.noise * rng.standard_normal(config.n_samples)
    sizes = class_sizes(config.n_samples, config.n_classes)
    y = np.empty(config.n_samples, dtype=np.int64)
    y[np.argsort(z, kind="stable")] = np.repeat(np.arange(1, config.n_classes + 1), sizes)
    return Dataset(X, y, config.n_classes)


def _parse_header(header, require_target):
    if not header:
        raise DataError("missing header row")
    target = header[-1] if header[-1] in ("label", "score") else None
    features = header[:-1] if target else header
    expected = [f"f{i}" for i in range(len(features))]
    if not features or features != expected:
        raise DataError(
            f"unknown column layout {header!r}: expected f0..f{{p-1}} optionally followed by 'label' or 'score'"
        )
    if require_target and target is None:
        raise DataError("dataset needs a 'label' or 'score' column")
    return len(features), target


def load_csv(path, n_classes=3, require_target=True):
    """Read ``f0..f{p-1}[,label|score]``; errors name the offending line."""
    rows, targets = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        p, target = _parse_header([h.strip() for h in header], require_target)
        width = p + (target is not None)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            if any(cell.strip() == "" for cell in row):
                raise DataError(f"{path}:{lineno}: missing value")
            try:
                rows.append([float(c) for c in row[:p]])
                if target is not None:
                    targets.append(float(row[p]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(rows[-1])):
                raise DataError(f"{path}:{lineno}: non-finite feature value")
    X = np.array(rows, dtype=np.float64).reshape(len(rows), p)
    if target is None:
        return Dataset(X, None, n_classes)
    t = np.array(targets)
    if target == "score":
        return Dataset(X, np.asarray(score_to_class(t)).reshape(-1), 3, t)
    if np.any(t != np.round(t)):
        raise DataError(f"{path}: labels must be integers 1..{n_classes}")
    y = t.astype(np.int64)
    bad = np.flatnonzero((y < 1) | (y > n_classes))
    if bad.size:
        raise DataError(f"{path}:{bad[0] + 2}: label {y[bad[0]]} outside 1..{n_classes}")
    return Dataset(X, y, n_classes)


def save_csv(dataset, path):
    """Write with 17 significant digits so that ``load_csv`` recovers every float exactly."""
    p = dataset.n_features
    header = [f"f{i}" for i in range(p)]
    if dataset.scores is not None:
        header.append("score")
        target = dataset.scores
        fmt_t = lambda v: format(v, ".17g")  # noqa: E731
    elif dataset.y is not None:
        header.append("label")
        target = dataset.y
        fmt_t = str
    else:
        target = None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            row = [format(v, ".17g") for v in dataset.X[i]]
            if target is not None:
                row.append(fmt_t(target[i]))
            w.writerow(row)


def kfold_split(y, k, seed=0):
    """Stratified k-fold: returns ``k`` ``(train_idx, test_idx)`` pairs.

    Per class, shuffled indices are concatenated and dealt round-robin, so
    test folds differ in size by at most one and every class is spread within
    one sample of proportional.
    """
    y = np.asarray(y)
    n = y.shape[0]
    if k < 2 or n < k:
        raise DataError(f"need 2 <= k <= n_samples, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    dealt = []
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        if members.size < k:
            warnings.warn(
                f"class {cls} has {members.size} members, fewer than k={k}; it cannot be stratified",
                stacklevel=2,
            )
        dealt.append(rng.permutation(members))
    order = np.concatenate(dealt)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % k
    all_idx = np.arange(n)
    return [(all_idx[fold_of != f], all_idx[fold_of == f]) for f in range(k)]
