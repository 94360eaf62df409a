"""Versioned JSON model archive.

Floats are written with Python's shortest round-trip representation (at
most 17 significant digits), so a saved model reloads bit-for-bit.
"""

import json

import numpy as np

from . import forest as fst
from .backbone import Backbone, BackboneConfig
from .estimators import DORFClassifier, MORFClassifier
from .exceptions import ConfigurationError

SCHEMA_VERSION = 1
FORMAT = "morf-archive"
_ESTIMATORS = {"MORFClassifier": MORFClassifier, "DORFClassifier": DORFClassifier}


def _json_param(v):
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, np.generic):
        return v.item()
    return v


def model_to_dict(est):
    bconf = est.backbone_.config
    doc = {
        "format": FORMAT,
        "schema_version": SCHEMA_VERSION,
        "estimator": type(est).__name__,
        "params": {k: _json_param(v) for k, v in sorted(est.get_params().items())},
        "classes": est.classes_.tolist(),
        "preprocessing": {"mean": est.mean_.tolist(), "scale": est.scale_.tolist()},
        "backbone": {
            "input_dim": bconf.input_dim,
            "hidden_dims": list(bconf.hidden_dims),
            "feature_dim": bconf.feature_dim,
            "activation": bconf.activation,
            "init_seed": bconf.init_seed,
            "theta": est.theta_.tolist(),
        },
        "forest": {
            "depth": est.forest_.depth,
            "eta": est.forest_.eta.tolist(),
            "leaves": est.forest_.leaves.tolist(),
        },
        "weight_net": None,
        "train": dict(est.train_meta_),
    }
    if est.phi_ is not None:
        doc["weight_net"] = {"hidden": (est.phi_.shape[1] - 1) // 3, "phi": est.phi_.tolist()}
    return doc


def model_from_dict(doc):
    if doc.get("format") != FORMAT:
        raise ConfigurationError("not a model archive")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigurationError(
            f"archive schema version {doc.get('schema_version')} is not supported (expected {SCHEMA_VERSION})"
        )
    cls = _ESTIMATORS.get(doc["estimator"])
    if cls is None:
        raise ConfigurationError(f"unknown estimator {doc['estimator']!r}")
    params = dict(doc["params"])
    if "hidden_dims" in params:
        params["hidden_dims"] = tuple(params["hidden_dims"])
    est = cls(**params)
    b = doc["backbone"]
    bconf = BackboneConfig(b["input_dim"], tuple(b["hidden_dims"]), b["feature_dim"], b["activation"], b["init_seed"])
    backbone = Backbone(bconf)
    theta = np.array(b["theta"], dtype=np.float64)
    if theta.shape != (backbone.n_params,):
        raise ConfigurationError(f"archive has {theta.size} backbone parameters, layout needs {backbone.n_params}")
    f = doc["forest"]
    forest = fst.Forest(f["depth"], np.array(f["eta"], dtype=np.int64), np.array(f["leaves"], dtype=np.float64))
    forest.validate(bconf.feature_dim)
    classes = np.array(doc["classes"])
    if forest.n_classes != len(classes):
        raise ConfigurationError(
            f"leaf distributions encode {forest.n_classes} classes, archive lists {len(classes)}"
        )
    mean = np.array(doc["preprocessing"]["mean"], dtype=np.float64)
    scale = np.array(doc["preprocessing"]["scale"], dtype=np.float64)
    if mean.shape != (bconf.input_dim,) or scale.shape != (bconf.input_dim,):
        raise ConfigurationError("preprocessing statistics do not match the backbone input width")
    est.classes_ = classes
    est.n_features_in_ = bconf.input_dim
    est.mean_, est.scale_ = mean, scale
    est.backbone_, est.theta_, est.forest_ = backbone, theta, forest
    est.phi_ = None if doc["weight_net"] is None else np.array(doc["weight_net"]["phi"], dtype=np.float64)
    est.train_meta_ = dict(doc["train"])
    return est


def save_model(est, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(est), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(doc)
