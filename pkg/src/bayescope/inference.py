"""Multi-pass prediction and the epistemic / aleatoric split.

For ``T`` sampled forward passes with head outputs ``(mu_t, sigma2_t)``::

    mu_hat    = mean(mu_t)
    aleatoric = mean(sigma2_t)
    epistemic = mean((mu_t - mu_hat)^2)        # population variance
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .models import FIXED_LOG_VAR

DEFAULT_PASSES = 20


@dataclass(frozen=True)
class UncertaintyReport:
    mu_hat: float
    epistemic_var: float
    aleatoric_var: float
    passes: int
    aleatoric_learned: bool = True
    total_var: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total_var", self.epistemic_var + self.aleatoric_var)


def report_from_passes(mus, variances, aleatoric_learned: bool = True) -> UncertaintyReport:
    mus = np.asarray(mus, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    if mus.size < 1 or mus.shape != variances.shape:
        raise ConfigError("need at least one pass and matching mu/variance arrays")
    # fsum is correctly rounded, so the report does not depend on pass order
    t = mus.size
    if np.all(mus == mus[0]):
        # identical passes (deterministic net or T = 1): exact mean, zero spread
        mu_hat, epistemic = float(mus[0]), 0.0
    else:
        mu_hat = math.fsum(mus) / t
        epistemic = math.fsum((mus - mu_hat) ** 2) / t
    return UncertaintyReport(mu_hat, epistemic, math.fsum(variances) / t, int(t), aleatoric_learned)


def derive_rng(base_seed: int, sample_index: int) -> np.random.Generator:
    """Per-sample RNG stream, independent of how the batch is scheduled."""
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), int(sample_index)]))


def _pass_outputs(model, x, passes, rng):
    mus, variances = np.empty(passes), np.empty(passes)
    mode = "sample" if model.spec.bayesian else "mean"
    with ad.no_grad():
        for t in range(passes):
            res = model.forward(x, mode, rng, compute_kl=False)
            mus[t] = res.mu.value[0]
            variances[t] = math.exp(res.log_var.value[0]) if res.has_sigma else math.exp(FIXED_LOG_VAR)
    return mus, variances


def predict(model, x, passes: int = DEFAULT_PASSES, rng=None) -> UncertaintyReport:
    """Uncertainty report for one input (vector ``[d]`` or image ``[h, w, c]``)."""
    if passes < 1:
        raise ConfigError("passes must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    x = np.asarray(x, dtype=np.float64)[None]
    mus, variances = _pass_outputs(model, x, passes, rng)
    if not model.spec.bayesian:
        # deterministic network: every pass is identical, epistemic is exactly 0
        mus[:] = mus[0]
    return report_from_passes(mus, variances, model.spec.has_sigma)


def worker_cap(requested: int) -> int:
    cap = os.environ.get("BAYESCOPE_THREADS")
    n = max(1, int(requested))
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def predict_batch(model, xs, passes: int = DEFAULT_PASSES, base_seed: int = 0, parallelism: int = 1):
    """``predict`` for every row of ``xs`` with stream ``derive_rng(base_seed, i)``."""
    if passes < 1:
        raise ConfigError("passes must be >= 1")
    xs = np.asarray(xs, dtype=np.float64)
    if len(xs) == 0:
        return []

    def one(i):
        return predict(model, xs[i], passes, derive_rng(base_seed, i))

    workers = worker_cap(parallelism)
    if workers == 1:
        return [one(i) for i in range(len(xs))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(len(xs))))
