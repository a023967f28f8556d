"""Accuracy, calibration and uncertainty-vs-age summaries of prediction sets."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "EvalReport",
    "type": "object",
    "required": ["variant", "n", "mae", "mae_std", "coverage", "profile"],
    "properties": {
        "variant": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "mae": {"type": "number", "minimum": 0},
        "mae_std": {"type": "number", "minimum": 0},
        "mean_epistemic_var": {"type": "number", "minimum": 0},
        "mean_aleatoric_var": {"type": "number", "minimum": 0},
        "aleatoric_learned": {"type": "boolean"},
        "coverage": {
            "type": "object",
            "required": ["1", "2"],
            "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1},
        },
        "profile": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["age_lo", "age_hi", "count", "mean_epistemic_var", "mean_aleatoric_var"],
                "properties": {
                    "age_lo": {"type": "number"},
                    "age_hi": {"type": "number"},
                    "count": {"type": "integer", "minimum": 1},
                    "mean_epistemic_var": {"type": "number", "minimum": 0},
                    "mean_aleatoric_var": {"type": "number", "minimum": 0},
                },
            },
        },
    },
}


def _arrays(preds, targets):
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if len(preds) != len(targets):
        raise ConfigError(f"{len(preds)} predictions but {len(targets)} targets")
    mu = np.array([p.mu_hat for p in preds], dtype=np.float64)
    ep = np.array([p.epistemic_var for p in preds], dtype=np.float64)
    al = np.array([p.aleatoric_var for p in preds], dtype=np.float64)
    return mu, ep, al, targets


def mae(preds, targets):
    """Mean and population std of the absolute error."""
    if len(preds) == 0:
        raise ConfigError("mae of an empty prediction set")
    mu, _, _, y = _arrays(preds, targets)
    err = np.abs(mu - y)
    return float(err.mean()), float(err.std())


def coverage(preds, targets, z: float) -> float:
    """Fraction of targets within ``z`` predictive standard deviations of ``mu_hat``."""
    if not z > 0:
        raise ConfigError("z must be > 0")
    if len(preds) == 0:
        return float("nan")
    mu, ep, al, y = _arrays(preds, targets)
    return float(np.mean(np.abs(y - mu) <= z * np.sqrt(ep + al)))


@dataclass(frozen=True)
class ProfileBin:
    age_lo: float
    age_hi: float
    count: int
    mean_epistemic_var: float
    mean_aleatoric_var: float


def uncertainty_profile(preds, targets, bin_width: float = 1.0):
    """Mean epistemic / aleatoric variance per age bin ``[k*w, (k+1)*w)``; empty bins omitted."""
    if len(preds) == 0:
        raise ConfigError("profile of an empty prediction set")
    if not bin_width > 0:
        raise ConfigError("bin_width must be > 0")
    _, ep, al, y = _arrays(preds, targets)
    keys = np.floor(y / bin_width).astype(np.int64)
    out = []
    for k in np.unique(keys):
        sel = keys == k
        out.append(ProfileBin(float(k * bin_width), float((k + 1) * bin_width), int(sel.sum()),
                              float(ep[sel].mean()), float(al[sel].mean())))
    return out


def mean_variance_in_range(preds, targets, lo: float, hi: float, kind: str = "aleatoric") -> float:
    """Mean per-sample variance over samples whose target lies in ``[lo, hi]``."""
    _, ep, al, y = _arrays(preds, targets)
    sel = (y >= lo) & (y <= hi)
    if not sel.any():
        return float("nan")
    vals = al if kind == "aleatoric" else ep
    return float(vals[sel].mean())


def saturation_ratio(preds, targets, old=(20.0, 24.0), young=(13.0, 17.0)) -> float:
    """Mean aleatoric variance over ``old`` ages divided by that over ``young`` ages."""
    return mean_variance_in_range(preds, targets, *old) / mean_variance_in_range(preds, targets, *young)


def scatter_data(preds, targets):
    """Rows of (true_age, mu_hat, epistemic_std, aleatoric_std) for scatter panels."""
    if len(preds) == 0:
        raise ConfigError("scatter data of an empty prediction set")
    mu, ep, al, y = _arrays(preds, targets)
    return [
        {"true_age": float(y[i]), "mu_hat": float(mu[i]),
         "epistemic_std": math.sqrt(ep[i]), "aleatoric_std": math.sqrt(al[i])}
        for i in range(len(y))
    ]


@dataclass
class EvalReport:
    variant: str
    n: int
    mae: float
    mae_std: float
    mean_epistemic_var: float
    mean_aleatoric_var: float
    aleatoric_learned: bool
    coverage: dict = field(default_factory=dict)
    profile: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coverage"] = {str(k): v for k, v in self.coverage.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate(preds, targets, variant: str = "unknown") -> EvalReport:
    m, s = mae(preds, targets)
    _, ep, al, _ = _arrays(preds, targets)
    return EvalReport(
        variant=variant,
        n=len(preds),
        mae=m,
        mae_std=s,
        mean_epistemic_var=float(ep.mean()),
        mean_aleatoric_var=float(al.mean()),
        aleatoric_learned=all(p.aleatoric_learned for p in preds),
        coverage={1: coverage(preds, targets, 1.0), 2: coverage(preds, targets, 2.0)},
        profile=[asdict(b) for b in uncertainty_profile(preds, targets)],
    )


def _rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(r[h]) if isinstance(r[h], float) else r[h] for h in header])
    return buf.getvalue()


def scatter_csv(preds, targets) -> str:
    return _rows_to_csv(["true_age", "mu_hat", "epistemic_std", "aleatoric_std"], scatter_data(preds, targets))


def profile_csv(preds, targets, bin_width: float = 1.0) -> str:
    rows = [asdict(b) for b in uncertainty_profile(preds, targets, bin_width)]
    return _rows_to_csv(["age_lo", "age_hi", "count", "mean_epistemic_var", "mean_aleatoric_var"], rows)
