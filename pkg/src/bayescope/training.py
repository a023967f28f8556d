"""Adam optimizer and the minibatch training loop.

Bayesian variants draw one fresh weight sample per minibatch step; the KL
term is weighted by ``1 / batches_per_epoch`` so that one epoch sums to the
full-data objective.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DivergedError, NumericDomainError

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ConfigError("adam_eps must be > 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainLog:
    epoch: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    nll: list = field(default_factory=list)
    kl: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def __len__(self):
        return len(self.epoch)

    def append(self, epoch, loss, nll, kl, seconds):
        self.epoch.append(epoch)
        self.loss.append(loss)
        self.nll.append(nll)
        self.kl.append(kl)
        self.seconds.append(seconds)

    def numeric_records(self):
        """(epoch, loss, nll, kl) rows; wall-time excluded so runs compare bitwise."""
        return list(zip(self.epoch, self.loss, self.nll, self.kl))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "nll", "kl", "seconds"])
        for row in zip(self.epoch, self.loss, self.nll, self.kl, self.seconds):
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
        return buf.getvalue()

    def summary(self) -> dict:
        if not self.epoch:
            return {"epochs": 0}
        return {"epochs": len(self.epoch), "final_loss": self.loss[-1],
                "final_nll": self.nll[-1], "final_kl": self.kl[-1]}


class AdamState(NamedTuple):
    m: np.ndarray
    v: np.ndarray
    t: int


def adam_init(param: np.ndarray) -> AdamState:
    return AdamState(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update. Returns ``(new_param, new_state)``."""
    if param.shape != grad.shape:
        raise ConfigError(f"adam_step: param {param.shape} and grad {grad.shape} differ")
    t = state.t + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * grad
    v = config.beta2 * state.v + (1.0 - config.beta2) * grad * grad
    m_hat = m / (1.0 - config.beta1 ** t)
    v_hat = v / (1.0 - config.beta2 ** t)
    new = param - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return new, AdamState(m, v, t)


def _unpack(dataset):
    if isinstance(dataset, tuple):
        x, y = dataset
    else:
        x, y = dataset.inputs(), dataset.ages
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y) == 0:
        raise ConfigError("cannot train on an empty dataset")
    if len(x) != len(y):
        raise ConfigError(f"{len(x)} inputs but {len(y)} targets")
    return x, y


def batches_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def train(model, dataset, config: TrainConfig):
    """Fit ``model`` in place. ``dataset`` is a SynthDataset or an ``(x, y)`` pair.

    Returns ``(model, TrainLog)``. Raises :class:`DivergedError` on a
    non-finite loss.
    """
    config.validate()
    x, y = _unpack(dataset)
    n = len(y)
    m_batches = batches_per_epoch(n, config.batch_size)
    kl_weight = 1.0 / m_batches
    shuffle_seq, noise_seq = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    noise_rng = np.random.default_rng(noise_seq)

    params = model.parameters()
    states = {name: adam_init(p.value) for name, p in params.items()}
    log = TrainLog()

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        tot = nll_sum = kl_sum = 0.0
        for b in range(m_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            model.zero_grad()
            try:
                # overflow is detected and reported as divergence; keep numpy quiet
                with np.errstate(over="ignore", invalid="ignore"):
                    terms = model.loss(x[idx], y[idx], "sample", kl_weight, noise_rng)
                    value = terms.total.item()
                    if not math.isfinite(value):
                        raise DivergedError(epoch, b, "non-finite loss")
                    ad.backward(terms.total)
            except NumericDomainError as exc:
                raise DivergedError(epoch, b, str(exc)) from exc
            for name, p in params.items():
                g = p.grad
                if not np.all(np.isfinite(g)):
                    raise DivergedError(epoch, b, f"non-finite gradient for {name}")
                p.value, states[name] = adam_step(p.value, g, states[name], config)
            tot += value
            nll_sum += terms.nll.item()
            kl_sum += terms.kl.item()
        log.append(epoch, tot / m_batches, nll_sum / m_batches, kl_sum / m_batches,
                   time.perf_counter() - t0)
        if config.log_every and (epoch + 1) % config.log_every == 0:
            logger.info("epoch %d loss %.4f nll %.4f kl %.2f", epoch, log.loss[-1], log.nll[-1], log.kl[-1])
    model.zero_grad()
    return model, log
