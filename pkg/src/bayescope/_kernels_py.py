"""Pure-numpy convolution and pooling kernels (fallback for ``_ckernels``).

All arrays are float64, channels-last: images are ``[N, H, W, C]`` and
kernels ``[KH, KW, C_in, C_out]``. Convolution is "valid" (no padding).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, k, stride):
    kh, kw = k.shape[0], k.shape[1]
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    return np.einsum("nijcpq,pqco->nijo", win, k, optimize=True)


def conv2d_backward_kernel(x, g, kh, kw, stride):
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    return np.einsum("nijcpq,nijo->pqco", win, g, optimize=True)


def conv2d_backward_input(g, k, h, w, stride):
    n, ho, wo, _ = g.shape
    kh, kw, c_in, _ = k.shape
    dx = np.zeros((n, h, w, c_in))
    for p in range(kh):
        for q in range(kw):
            dx[:, p:p + stride * ho:stride, q:q + stride * wo:stride, :] += g @ k[p, q].T
    return dx


def mean_pool_forward(x, size):
    n, h, w, c = x.shape
    ho, wo = h // size, w // size
    xs = x[:, :ho * size, :wo * size, :].reshape(n, ho, size, wo, size, c)
    return xs.mean(axis=(2, 4))


def mean_pool_backward(g, h, w, size):
    n, ho, wo, c = g.shape
    dx = np.zeros((n, h, w, c))
    spread = np.repeat(np.repeat(g, size, axis=1), size, axis=2) / (size * size)
    dx[:, :ho * size, :wo * size, :] = spread
    return dx
