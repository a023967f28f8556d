"""Gaussian densities, the reparameterization trick and the variational loss.

The loss minimized for Bayesian models is the single-sample free energy

    log q(w | theta) - log p(w) - log p(D | w)

with ``w`` drawn once per step via ``w = mu + softplus(rho) * eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, DimensionError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianParams:
    mu: float
    log_var: float

    @property
    def var(self) -> float:
        return math.exp(self.log_var)


@dataclass(frozen=True)
class PriorSpec:
    """Zero-mean Gaussian prior over every weight, standard deviation ``sigma_p``."""

    sigma_p: float = 1.0

    def __post_init__(self):
        if not (self.sigma_p > 0 and math.isfinite(self.sigma_p)):
            raise ConfigError(f"prior sigma_p must be positive, got {self.sigma_p}")

    @property
    def log_var(self) -> float:
        return 2.0 * math.log(self.sigma_p)


def gaussian_log_pdf(x, mu, log_var) -> Node:
    """Elementwise log N(x | mu, exp(log_var)). Any argument may be a Node."""
    return ad.gaussian_log_pdf(x, mu, log_var)


def reparameterize(mu: Node, rho: Node, eps) -> Node:
    """Return ``mu + softplus(rho) * eps``, differentiable in ``mu`` and ``rho``."""
    eps = np.asarray(eps, dtype=np.float64)
    if mu.shape != rho.shape or mu.shape != eps.shape:
        raise DimensionError(f"reparameterize: shapes {mu.shape}, {rho.shape}, {eps.shape} differ")
    return ad.add(mu, ad.mul(ad.softplus(rho), eps))


def mc_kl_term(omega: Node, mu: Node, rho: Node, prior: PriorSpec) -> Node:
    """Single-sample estimate of KL(q || p), summed over all weights."""
    q_log_var = ad.mul(2.0, ad.log(ad.softplus(rho)))
    log_q = gaussian_log_pdf(omega, mu, q_log_var)
    log_p = gaussian_log_pdf(omega, 0.0, prior.log_var)
    return ad.reduce_sum(ad.sub(log_q, log_p))


def gaussian_kl_closed_form(mu_q, sigma_q, sigma_p) -> float:
    """KL(N(mu_q, sigma_q^2) || N(0, sigma_p^2)); used only as a check."""
    return math.log(sigma_p / sigma_q) + (sigma_q ** 2 + mu_q ** 2) / (2 * sigma_p ** 2) - 0.5


def gaussian_nll(y: float, pred: GaussianParams) -> float:
    return 0.5 * LOG_2PI + 0.5 * pred.log_var + 0.5 * (y - pred.mu) ** 2 / math.exp(pred.log_var)


def gaussian_nll_batch(y, mu: Node, log_var) -> Node:
    """Summed negative log-likelihood over a batch; ``log_var`` may be a constant."""
    return ad.neg(ad.reduce_sum(gaussian_log_pdf(y, mu, log_var)))


def elbo_loss(batch_nll: Node, kl: Node, kl_weight: float) -> Node:
    """``batch_nll + kl_weight * kl``.

    ``kl_weight`` is normally ``1 / batches_per_epoch``; 0 is accepted to
    recover the deterministic-network objective.
    """
    if not (0.0 <= kl_weight <= 1.0):
        raise ConfigError(f"kl_weight must lie in [0, 1], got {kl_weight}")
    return ad.add(batch_nll, ad.mul(kl_weight, kl))
