"""
Self-describing model archives (JSON).

    {"kind": "network", "format": 1, "name": ..., "options": {...},
     "input_shape": [T, V], "layers": [{"type": ..., "config": {...}}, ...],
     "params": {"0.K": {"shape": [...], "data": [...]}, ...},
     "meta": {...}}

    {"kind": "fixed", "probabilities": [...], "meta": {...}}

`meta` carries whatever the caller stores with the model (normalization spec,
class boundaries and means, category).
"""

import json
import logging
from pathlib import Path

import numpy as np

from .models import Sequential, FixedModel
from ..utils import smart_open

logger = logging.getLogger(__name__)

FORMAT = 1


class ArchiveError(ValueError):
    pass


def model_to_dict(model, meta=None):
    if isinstance(model, FixedModel):
        return {"kind": "fixed", "probabilities": model.probabilities.tolist(), "meta": meta or {}}
    return {
        "kind": "network",
        "format": FORMAT,
        "name": model.name,
        "options": model.options,
        "input_shape": list(model.input_shape),
        "layers": model.layer_configs(),
        "params": {
            key: {"shape": list(value.shape), "data": value.ravel().tolist()}
            for key, value in model.params().items()
        },
        "meta": meta or {},
    }


def model_from_dict(data):
    """Returns (model, meta)"""
    kind = data.get("kind")
    meta = data.get("meta", {})
    if kind == "fixed":
        return FixedModel(data["probabilities"]), meta
    if kind != "network":
        raise ArchiveError(f"Unknown archive kind {kind!r}")
    if data.get("format", FORMAT) > FORMAT:
        raise ArchiveError(f"Archive format {data['format']} is newer than {FORMAT}")

    model = Sequential.from_configs(data["layers"], name=data.get("name"), options=data.get("options"))
    model.build(data["input_shape"])
    params = {k: np.asarray(v["data"]).reshape(v["shape"]) for k, v in data["params"].items()}
    missing = set(model.params()) - set(params)
    if missing:
        raise ArchiveError(f"Archive lacks parameters {sorted(missing)}")
    model.set_params(params)
    return model, meta


def save(path, model, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with smart_open(path, "wt") as fp:
        json.dump(model_to_dict(model, meta), fp)
    logger.debug(f"Saved {getattr(model, 'name', 'model')} to {path}")
    return path


def load(path):
    with smart_open(path, "rt") as fp:
        try:
            data = json.load(fp)
        except json.JSONDecodeError as E:
            raise ArchiveError(f"{path}: {E}")
    return model_from_dict(data)
