"""Versioned text format for trained models (``.calm-model``).

The file is a single JSON document. Header keys come first, then the
payload, then a SHA-256 checksum over the canonical encoding of everything
else. Floats are written with Python's shortest round-trip repr, so
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict

import numpy as np

from ..errors import CorruptModelError, IncompatibleFormatError
from ..ingest import atomic_write_text
from .forest import RandomForestModel, RFConfig, Tree
from .mlp import MLPConfig, MlpModel

FORMAT_VERSION = 1
MODEL_SUFFIX = ".calm-model"


def _array(a) -> dict:
    a = np.asarray(a)
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def _unarray(d, dtype=float) -> np.ndarray:
    return np.asarray(d["data"], dtype=dtype).reshape(d["shape"])


def _checksum(body: dict) -> str:
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _py(v):
    # numpy scalars -> plain python for JSON
    return v.item() if isinstance(v, np.generic) else v


def model_to_dict(model) -> dict:
    if isinstance(model, RandomForestModel):
        header = {
            "format_version": FORMAT_VERSION,
            "model_type": "random_forest",
            "feature_names": list(model.feature_names),
            "classes": [_py(c) for c in model.classes],
            "seed": int(model.seed),
            "hyperparameters": asdict(model.config),
        }
        payload = {
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "counts": _array(t.counts),
                }
                for t in model.trees
            ]
        }
    elif isinstance(model, MlpModel):
        hp = asdict(model.config)
        hp["hidden"] = list(hp["hidden"])
        hp["epochs_trained"] = model.epochs_trained
        header = {
            "format_version": FORMAT_VERSION,
            "model_type": "mlp",
            "feature_names": list(model.feature_names),
            "classes": [_py(c) for c in model.classes],
            "seed": int(model.seed),
            "hyperparameters": hp,
        }
        payload = {
            "params": {k: _array(v) for k, v in model.params.items()},
            "running_mean": [_array(v) for v in model.running_mean],
            "running_var": [_array(v) for v in model.running_var],
            "input_mean": None if model.input_mean is None else _array(model.input_mean),
            "input_scale": None if model.input_scale is None else _array(model.input_scale),
        }
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    body = dict(header)
    body["payload"] = payload
    body["checksum"] = _checksum(body)
    return body


def dumps_model(model) -> str:
    return json.dumps(model_to_dict(model), indent=1, allow_nan=False) + "\n"


def save_model(model, path) -> None:
    atomic_write_text(path, dumps_model(model))


def loads_model(text: str):
    try:
        body = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptModelError(f"model file is not valid JSON: {exc}") from None
    version = body.get("format_version")
    if version != FORMAT_VERSION:
        raise IncompatibleFormatError(f"model format_version {version!r}; this build reads {FORMAT_VERSION}")
    stored = body.pop("checksum", None)
    if stored != _checksum(body):
        raise CorruptModelError("model checksum mismatch")
    hp = dict(body["hyperparameters"])
    p = body["payload"]
    if body["model_type"] == "random_forest":
        trees = [
            Tree(
                np.asarray(t["feature"], dtype=np.int64),
                np.asarray(t["threshold"], dtype=float),
                np.asarray(t["left"], dtype=np.int64),
                np.asarray(t["right"], dtype=np.int64),
                _unarray(t["counts"]),
            )
            for t in p["trees"]
        ]
        return RandomForestModel(trees, body["feature_names"], body["classes"], body["seed"], RFConfig(**hp))
    if body["model_type"] == "mlp":
        epochs = hp.pop("epochs_trained", 0)
        hp["hidden"] = tuple(hp["hidden"])
        return MlpModel(
            {k: _unarray(v) for k, v in p["params"].items()},
            [_unarray(v) for v in p["running_mean"]],
            [_unarray(v) for v in p["running_var"]],
            body["feature_names"],
            body["classes"],
            body["seed"],
            MLPConfig(**hp),
            None if p["input_mean"] is None else _unarray(p["input_mean"]),
            None if p["input_scale"] is None else _unarray(p["input_scale"]),
            epochs,
        )
    raise CorruptModelError(f"unknown model_type {body['model_type']!r}")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
