"""JSON checkpoints with exact (hex-float) parameter encoding.

Layout::

    {
      "format_version": 1,
      "model_spec": {...},
      "params": {"dense0.w_mu": {"shape": [2, 64], "data": ["0x1.8p-3", ...]}, ...},
      "train_seed": 7,
      "train_summary": {...}
    }
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .models import Model, ModelSpec

FORMAT_VERSION = 1


def encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": [float(v).hex() for v in arr.reshape(-1)]}


def decode_array(obj: dict) -> np.ndarray:
    flat = np.array([float.fromhex(v) for v in obj["data"]], dtype=np.float64)
    return flat.reshape(obj["shape"])


def atomic_write(path, data) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_dict(model: Model, train_seed: int | None = None, train_summary: dict | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "model_spec": model.spec.to_dict(),
        "params": {name: encode_array(p.value) for name, p in model.parameters().items()},
        "train_seed": train_seed,
        "train_summary": train_summary or {},
    }


def save_checkpoint(model: Model, path, train_seed: int | None = None, train_summary: dict | None = None) -> None:
    text = json.dumps(checkpoint_dict(model, train_seed, train_summary), indent=1, sort_keys=True) + "\n"
    atomic_write(path, text)


def model_from_dict(d: dict) -> Model:
    if d.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format version {d.get('format_version')!r}")
    model = Model(ModelSpec.from_dict(d["model_spec"]))
    params = model.parameters()
    if set(params) != set(d["params"]):
        raise ConfigError("checkpoint parameters do not match the model spec")
    for name, p in params.items():
        arr = decode_array(d["params"][name])
        if arr.shape != p.value.shape:
            raise ConfigError(f"checkpoint shape mismatch for {name}: {arr.shape} vs {p.value.shape}")
        p.value = arr
    return model


def load_checkpoint(path):
    """Returns ``(model, metadata)`` where metadata holds train_seed and train_summary."""
    with open(path) as fh:
        d = json.load(fh)
    return model_from_dict(d), {"train_seed": d.get("train_seed"), "train_summary": d.get("train_summary", {})}
