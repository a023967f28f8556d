"""Backend selection for the convolution/pooling kernels.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementation in ``_kernels_py`` is used. Set ``BAYESCOPE_PURE_PYTHON=1``
to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("BAYESCOPE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, k, stride, impl=None):
    return (impl or _impl).conv2d_forward(_c(x), _c(k), stride)


def conv2d_backward_kernel(x, g, kh, kw, stride, impl=None):
    return (impl or _impl).conv2d_backward_kernel(_c(x), _c(g), kh, kw, stride)


def conv2d_backward_input(g, k, h, w, stride, impl=None):
    return (impl or _impl).conv2d_backward_input(_c(g), _c(k), h, w, stride)


def mean_pool_forward(x, size, impl=None):
    return (impl or _impl).mean_pool_forward(_c(x), size)


def mean_pool_backward(g, h, w, size, impl=None):
    return (impl or _impl).mean_pool_backward(_c(g), h, w, size)


def available_backends():
    """Map of backend name -> module for every importable implementation."""
    out = {"python": _kernels_py}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


def set_backend(name: str) -> str:
    """Switch the process-wide default backend; returns the previous name."""
    global _impl, BACKEND
    backends = available_backends()
    if name not in backends:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(backends)}")
    prev = BACKEND
    _impl, BACKEND = backends[name], name
    return prev
