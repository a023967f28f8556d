"""The four model variants: {deterministic, Bayesian} x {point head, Gaussian head}.

Vector inputs go through dense 64 -> dense 64 -> head. Image inputs
(16x16x1) go through conv 3x3x8 -> mean-pool 2 -> conv 3x3x16 -> mean-pool 2
-> flatten -> dense 32 -> head. Hidden activations are ReLU, the head is
linear. Inputs and targets pass through a fixed affine standardization that
is part of the ModelSpec (not trained), so all model outputs are in target units.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, ContractError, DimensionError
from .layers import init_layer
from .probability import PriorSpec, elbo_loss, gaussian_nll_batch

VARIANTS = ("cnn", "cnn_sigma", "bcnn", "bcnn_sigma")
INPUT_KINDS = ("vector", "image")
LOG_VAR_MIN, LOG_VAR_MAX = -10.0, 10.0
# Output heads start near zero so the initial prediction is close to the
# target mean with unit (standardized) variance. With a full-scale He head
# the initial function can be years off in part of the input range; the
# Gaussian NLL then raises sigma there first, which scales the mean's
# gradient by 1/sigma^2 and can stall that region for the whole run.
HEAD_INIT_SCALE = 0.1
FIXED_LOG_VAR = 0.0  # sigma = 1 target unit for the plain BCNN likelihood


@dataclass
class ModelSpec:
    variant: str = "bcnn_sigma"
    input_kind: str = "vector"
    input_dim: int = 2
    hidden: tuple = (64, 64)
    image_size: int = 16
    image_channels: int = 1
    conv_channels: tuple = (8, 16)
    image_dense: int = 32
    prior_sigma: float = 1.0
    seed: int = 0
    x_shift: tuple = ()
    x_scale: tuple = ()
    y_shift: float = 0.0
    y_scale: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.x_shift = tuple(float(v) for v in self.x_shift)
        self.x_scale = tuple(float(v) for v in self.x_scale)
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.input_kind not in INPUT_KINDS:
            raise ConfigError(f"input_kind must be one of {INPUT_KINDS}, got {self.input_kind!r}")
        if self.input_kind == "vector" and self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden sizes must be positive")
        if self.input_kind == "image":
            if len(self.conv_channels) != 2 or self.image_size < 12:
                raise ConfigError("image pathway needs two conv stages and image_size >= 12")
        if not self.y_scale > 0 or any(s <= 0 for s in self.x_scale):
            raise ConfigError("standardization scales must be positive")
        if self.x_shift and len(self.x_shift) != len(self.x_scale):
            raise ConfigError("x_shift and x_scale lengths differ")
        PriorSpec(self.prior_sigma)

    @property
    def bayesian(self) -> bool:
        return self.variant.startswith("bcnn")

    @property
    def has_sigma(self) -> bool:
        return self.variant.endswith("_sigma")

    @property
    def head_outputs(self) -> int:
        return 2 if self.has_sigma else 1

    @property
    def prior(self) -> PriorSpec:
        return PriorSpec(self.prior_sigma)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("hidden", "conv_channels", "x_shift", "x_scale"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model spec fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class GaussianPrediction:
    mu: float
    log_var: float

    def __post_init__(self):
        if not (LOG_VAR_MIN <= self.log_var <= LOG_VAR_MAX):
            raise ContractError(f"log_var {self.log_var} outside clamp range")

    @property
    def var(self) -> float:
        return math.exp(self.log_var)


class ForwardResult:
    """Head outputs of one forward pass plus the pass's total KL."""

    __slots__ = ("mu", "_log_var", "kl")

    def __init__(self, mu: Node, log_var: Optional[Node], kl: Node):
        self.mu = mu
        self._log_var = log_var
        self.kl = kl

    @property
    def has_sigma(self) -> bool:
        return self._log_var is not None

    @property
    def log_var(self) -> Node:
        if self._log_var is None:
            raise ContractError("this variant has no aleatoric head; log_var is not defined")
        return self._log_var

    def predictions(self) -> list:
        if self._log_var is None:
            raise ContractError("this variant has no aleatoric head; log_var is not defined")
        return [GaussianPrediction(float(m), float(v)) for m, v in zip(self.mu.value, self._log_var.value)]


class LossTerms(NamedTuple):
    total: Node
    nll: Node
    kl: Node


def soft_clamp(raw: Node) -> Node:
    """Smoothly squash ``raw`` into (LOG_VAR_MIN, LOG_VAR_MAX).

    A hard clamp has zero gradient outside its range, so a head pushed past
    the bound early in training can never come back; tanh keeps a gradient.
    """
    half = 0.5 * (LOG_VAR_MAX - LOG_VAR_MIN)
    mid = 0.5 * (LOG_VAR_MAX + LOG_VAR_MIN)
    return ad.add(ad.mul(ad.tanh(ad.mul(ad.sub(raw, mid), 1.0 / half)), half), mid)


class Model:
    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.layers = self._build_layers()

    # --------------------------------------------------------------- build
    def _build_layers(self) -> dict:
        s = self.spec
        seeds = np.random.SeedSequence(s.seed).spawn(8)
        kw = dict(variational=s.bayesian, prior=s.prior)
        layers = {}
        if s.input_kind == "vector":
            dims = [s.input_dim, *s.hidden]
            for i in range(len(s.hidden)):
                layers[f"dense{i}"] = init_layer((dims[i], dims[i + 1]), seeds[i], **kw)
            layers["head"] = init_layer((dims[-1], s.head_outputs), seeds[7], activation="identity",
                                   scale=HEAD_INIT_SCALE, **kw)
        else:
            c1, c2 = s.conv_channels
            layers["conv0"] = init_layer((3, 3, s.image_channels, c1), seeds[0], kind="conv", **kw)
            layers["conv1"] = init_layer((3, 3, c1, c2), seeds[1], kind="conv", **kw)
            side = ((s.image_size - 2) // 2 - 2) // 2
            layers["dense0"] = init_layer((side * side * c2, s.image_dense), seeds[2], **kw)
            layers["head"] = init_layer((s.image_dense, s.head_outputs), seeds[7], activation="identity",
                                   scale=HEAD_INIT_SCALE, **kw)
        return layers

    def parameters(self) -> dict[str, Node]:
        return {f"{lname}.{pname}": p
                for lname, layer in self.layers.items()
                for pname, p in layer.parameters().items()}

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters().values())

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    # ------------------------------------------------------------- forward
    def _standardize(self, x: np.ndarray) -> np.ndarray:
        s = self.spec
        x = np.asarray(x, dtype=np.float64)
        if s.input_kind == "vector":
            if x.ndim == 1:
                x = x[None, :]
            if x.ndim != 2 or x.shape[1] != s.input_dim:
                raise DimensionError(f"expected vector input [n, {s.input_dim}], got {x.shape}")
            if s.x_scale:
                x = (x - np.asarray(s.x_shift)) / np.asarray(s.x_scale)
        else:
            if x.ndim == 3:
                x = x[None]
            want = (s.image_size, s.image_size, s.image_channels)
            if x.ndim != 4 or x.shape[1:] != want:
                raise DimensionError(f"expected image input [n, {want}], got {x.shape}")
        return x

    def forward(self, x, mode: str = "sample", rng=None, compute_kl: bool = True) -> ForwardResult:
        """Run the network. With ``compute_kl=False`` the result's ``kl`` is a constant 0."""
        s = self.spec
        h = ad.constant(self._standardize(x))
        kls = []

        def apply(name, h):
            out, k = self.layers[name].forward(h, mode, rng, compute_kl)
            if compute_kl and self.layers[name].variational:
                kls.append(k)
            return out

        if s.input_kind == "vector":
            for i in range(len(s.hidden)):
                h = apply(f"dense{i}", h)
        else:
            h = ad.mean_pool2d(apply("conv0", h), 2)
            h = ad.mean_pool2d(apply("conv1", h), 2)
            h = ad.reshape(h, (h.shape[0], -1))
            h = apply("dense0", h)
        out = apply("head", h)
        kl = kls[0] if kls else ad.constant(0.0)
        for k in kls[1:]:
            kl = ad.add(kl, k)
        mu = ad.add(ad.mul(out[:, 0], s.y_scale), s.y_shift)
        log_var = None
        if s.has_sigma:
            log_var = soft_clamp(ad.add(out[:, 1], 2.0 * math.log(s.y_scale)))
        return ForwardResult(mu, log_var, kl)

    # ---------------------------------------------------------------- loss
    def loss(self, x, y, mode: str = "sample", kl_weight: float = 1.0, rng=None) -> LossTerms:
        """Training objective for one batch (see the variant table in the README)."""
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.size == 0:
            raise ConfigError("loss needs a nonempty batch")
        res = self.forward(x, mode, rng)
        if res.mu.shape != y.shape:
            raise DimensionError(f"targets {y.shape} do not match predictions {res.mu.shape}")
        v = self.spec.variant
        if v == "cnn":
            nll = ad.reduce_mean(ad.square(ad.sub(res.mu, y)))
            return LossTerms(nll, nll, res.kl)
        if v == "cnn_sigma":
            nll = gaussian_nll_batch(y, res.mu, res.log_var)
            return LossTerms(nll, nll, res.kl)
        log_var = res.log_var if v == "bcnn_sigma" else FIXED_LOG_VAR
        nll = gaussian_nll_batch(y, res.mu, log_var)
        return LossTerms(elbo_loss(nll, res.kl, kl_weight), nll, res.kl)


def build(spec: ModelSpec) -> Model:
    spec.validate()
    return Model(spec)


def forward(model: Model, x, mode: str = "sample", rng=None) -> ForwardResult:
    return model.forward(x, mode, rng)


def loss(model: Model, x, y, mode: str = "sample", kl_weight: float = 1.0, rng=None) -> LossTerms:
    return model.loss(x, y, mode, kl_weight, rng)
