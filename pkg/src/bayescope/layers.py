"""Deterministic and variational (reparameterized) dense / conv2d layers.

Every layer's ``forward`` returns ``(output, kl)``. Deterministic layers
report a constant zero KL; variational layers report the single-sample KL
estimate for the weights drawn in that pass.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, DimensionError
from .probability import PriorSpec, mc_kl_term, reparameterize

ACTIVATIONS = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "identity": lambda x: x,
}

MODES = ("sample", "mean")

INIT_POSTERIOR_SIGMA = 0.05


def softplus_inv(y):
    """Inverse of softplus, ``log(exp(y) - 1)``."""
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


def he_uniform_bound(fan_in: int) -> float:
    return math.sqrt(6.0 / fan_in)


def _check_activation(name):
    if name not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}")
    return name


def _check_mode(mode):
    if mode not in MODES:
        raise ConfigError(f"mode must be 'sample' or 'mean', got {mode!r}")


class FrozenNoise:
    """RNG stand-in that records standard-normal draws and replays them.

    After :meth:`rewind`, the same sequence of ``standard_normal`` calls
    returns the same arrays, which makes a sampled loss a deterministic
    function of the parameters (needed for finite-difference checks).
    """

    def __init__(self, rng=None):
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._draws: list[np.ndarray] = []
        self._pos = 0

    def standard_normal(self, shape):
        if self._pos < len(self._draws):
            draw = self._draws[self._pos]
            if draw.shape != (tuple(shape) if np.ndim(shape) else (int(shape),)):
                raise DimensionError("FrozenNoise: replayed draw has a different shape")
        else:
            draw = self._rng.standard_normal(shape)
            self._draws.append(draw)
        self._pos += 1
        return draw.copy()

    def rewind(self):
        self._pos = 0


class _Layer:
    variational = False

    def parameters(self) -> dict[str, Node]:
        raise NotImplementedError

    def kl_zero(self):
        return ad.constant(0.0)


class DenseLayer(_Layer):
    def __init__(self, weights, bias, activation: str = "relu"):
        self.weights = ad.parameter(weights)
        self.bias = ad.parameter(bias)
        self.activation = _check_activation(activation)
        if self.weights.value.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise DimensionError(f"dense: weight {self.weights.shape} / bias {self.bias.shape} mismatch")

    @property
    def in_dim(self):
        return self.weights.shape[0]

    @property
    def out_dim(self):
        return self.weights.shape[1]

    def parameters(self):
        return {"weights": self.weights, "bias": self.bias}

    def forward(self, x, mode="mean", rng=None, compute_kl=True):
        _check_mode(mode)
        x = ad.as_node(x)
        if x.value.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"dense: input {x.shape} does not match in-dimension {self.in_dim}")
        out = ad.add(ad.matmul(x, self.weights), self.bias)
        return ACTIVATIONS[self.activation](out), self.kl_zero()


class VariationalDenseLayer(_Layer):
    """Dense layer with a factorized Gaussian posterior over weights and biases."""

    variational = True

    def __init__(self, w_mu, w_rho, b_mu, b_rho, activation: str = "relu", prior: PriorSpec = PriorSpec()):
        self.w_mu, self.w_rho = ad.parameter(w_mu), ad.parameter(w_rho)
        self.b_mu, self.b_rho = ad.parameter(b_mu), ad.parameter(b_rho)
        self.activation = _check_activation(activation)
        self.prior = prior
        if (self.w_mu.value.ndim != 2 or self.w_rho.shape != self.w_mu.shape
                or self.b_mu.shape != (self.w_mu.shape[1],) or self.b_rho.shape != self.b_mu.shape):
            raise DimensionError("variational dense: inconsistent parameter shapes")

    @property
    def in_dim(self):
        return self.w_mu.shape[0]

    @property
    def out_dim(self):
        return self.w_mu.shape[1]

    def parameters(self):
        return {"w_mu": self.w_mu, "w_rho": self.w_rho, "b_mu": self.b_mu, "b_rho": self.b_rho}

    def sample_weights(self, mode, rng, compute_kl=True):
        """Draw (W, b) and the KL estimate for this draw (None if not requested)."""
        _check_mode(mode)
        if mode == "sample":
            if rng is None:
                raise ConfigError("sample mode needs an rng")
            w_eps = rng.standard_normal(self.w_mu.shape)
            b_eps = rng.standard_normal(self.b_mu.shape)
        else:
            w_eps = np.zeros(self.w_mu.shape)
            b_eps = np.zeros(self.b_mu.shape)
        w = reparameterize(self.w_mu, self.w_rho, w_eps)
        b = reparameterize(self.b_mu, self.b_rho, b_eps)
        kl = None
        if compute_kl:
            kl = ad.add(mc_kl_term(w, self.w_mu, self.w_rho, self.prior),
                        mc_kl_term(b, self.b_mu, self.b_rho, self.prior))
        return w, b, kl

    def forward(self, x, mode="sample", rng=None, compute_kl=True):
        x = ad.as_node(x)
        if x.value.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"dense: input {x.shape} does not match in-dimension {self.in_dim}")
        w, b, kl = self.sample_weights(mode, rng, compute_kl)
        out = ad.add(ad.matmul(x, w), b)
        return ACTIVATIONS[self.activation](out), kl


class Conv2dLayer(_Layer):
    def __init__(self, kernels, bias, stride: int = 1, activation: str = "relu"):
        self.kernels = ad.parameter(kernels)
        self.bias = ad.parameter(bias)
        self.stride = int(stride)
        self.activation = _check_activation(activation)
        if self.kernels.value.ndim != 4 or self.bias.shape != (self.kernels.shape[3],):
            raise DimensionError("conv: inconsistent kernel/bias shapes")

    def parameters(self):
        return {"kernels": self.kernels, "bias": self.bias}

    def forward(self, x, mode="mean", rng=None, compute_kl=True):
        _check_mode(mode)
        out = ad.add(ad.conv2d(x, self.kernels, self.stride), self.bias)
        return ACTIVATIONS[self.activation](out), self.kl_zero()


class VariationalConv2dLayer(_Layer):
    variational = True

    def __init__(self, k_mu, k_rho, b_mu, b_rho, stride: int = 1, activation: str = "relu",
                 prior: PriorSpec = PriorSpec()):
        self.k_mu, self.k_rho = ad.parameter(k_mu), ad.parameter(k_rho)
        self.b_mu, self.b_rho = ad.parameter(b_mu), ad.parameter(b_rho)
        self.stride = int(stride)
        self.activation = _check_activation(activation)
        self.prior = prior
        if (self.k_mu.value.ndim != 4 or self.k_rho.shape != self.k_mu.shape
                or self.b_mu.shape != (self.k_mu.shape[3],) or self.b_rho.shape != self.b_mu.shape):
            raise DimensionError("variational conv: inconsistent parameter shapes")

    def parameters(self):
        return {"k_mu": self.k_mu, "k_rho": self.k_rho, "b_mu": self.b_mu, "b_rho": self.b_rho}

    def sample_weights(self, mode, rng, compute_kl=True):
        _check_mode(mode)
        if mode == "sample":
            if rng is None:
                raise ConfigError("sample mode needs an rng")
            k_eps = rng.standard_normal(self.k_mu.shape)
            b_eps = rng.standard_normal(self.b_mu.shape)
        else:
            k_eps = np.zeros(self.k_mu.shape)
            b_eps = np.zeros(self.b_mu.shape)
        k = reparameterize(self.k_mu, self.k_rho, k_eps)
        b = reparameterize(self.b_mu, self.b_rho, b_eps)
        kl = None
        if compute_kl:
            kl = ad.add(mc_kl_term(k, self.k_mu, self.k_rho, self.prior),
                        mc_kl_term(b, self.b_mu, self.b_rho, self.prior))
        return k, b, kl

    def forward(self, x, mode="sample", rng=None, compute_kl=True):
        k, b, kl = self.sample_weights(mode, rng, compute_kl)
        out = ad.add(ad.conv2d(x, k, self.stride), b)
        return ACTIVATIONS[self.activation](out), kl


def forward_dense(layer, x, mode="mean", rng=None):
    """Apply a (variational) dense layer; returns ``(output, kl)``."""
    return layer.forward(x, mode, rng)


def forward_conv(layer, x, mode="mean", rng=None):
    """Apply a (variational) conv layer; returns ``(output, kl)``."""
    return layer.forward(x, mode, rng)


def init_layer(shape, seed, *, kind: str = "dense", variational: bool = False, activation: str = "relu",
               stride: int = 1, prior: PriorSpec = PriorSpec(), init_sigma: float = INIT_POSTERIOR_SIGMA,
               scale: float = 1.0):
    """He-uniform initialization.

    ``shape`` is ``(in, out)`` for dense layers and ``(kh, kw, c_in, c_out)``
    for conv layers. Biases start at zero. Variational layers get the He
    draw as their means and ``rho = softplus_inv(init_sigma)`` everywhere.
    ``scale`` shrinks the He draw (used for output heads).
    """
    rng = np.random.default_rng(seed)
    shape = tuple(int(s) for s in shape)
    if kind == "dense":
        if len(shape) != 2:
            raise ConfigError(f"dense layer shape must be (in, out), got {shape}")
        fan_in = shape[0]
    elif kind == "conv":
        if len(shape) != 4:
            raise ConfigError(f"conv layer shape must be (kh, kw, c_in, c_out), got {shape}")
        fan_in = shape[0] * shape[1] * shape[2]
    else:
        raise ConfigError(f"unknown layer kind {kind!r}")
    if min(shape) < 1:
        raise ConfigError(f"layer extents must be positive, got {shape}")
    bound = he_uniform_bound(fan_in)
    w = scale * rng.uniform(-bound, bound, size=shape)
    b = np.zeros(shape[-1])
    if not variational:
        if kind == "dense":
            return DenseLayer(w, b, activation)
        return Conv2dLayer(w, b, stride, activation)
    rho0 = float(softplus_inv(init_sigma))
    w_rho = np.full(shape, rho0)
    b_rho = np.full(shape[-1], rho0)
    if kind == "dense":
        return VariationalDenseLayer(w, w_rho, b, b_rho, activation, prior)
    return VariationalConv2dLayer(w, w_rho, b, b_rho, stride, activation, prior)
