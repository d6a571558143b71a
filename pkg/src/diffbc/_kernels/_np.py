"""Pure-numpy kernel implementations (fallback backend)."""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x, upstream):
    # d/dx [x * Phi(x)] = Phi(x) + x * phi(x)
    phi = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return upstream * (0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi)


def leaky_relu(x, slope):
    return np.where(x >= 0.0, x, slope * x)


def leaky_relu_grad(x, upstream, slope):
    return np.where(x >= 0.0, upstream, slope * upstream)


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    """In-place adaptive-moment update on flat float64 arrays; ``t`` is 1-based."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


def pairwise_sqdist(x, y, block=256):
    """Squared Euclidean distances between rows of x (n,d) and y (m,d).

    Computed from explicit differences (no |x|^2+|y|^2-2xy expansion) so the
    values are as accurate as a scalar loop.  Blocked to bound memory.
    """
    n = x.shape[0]
    out = np.empty((n, y.shape[0]), dtype=np.float64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = x[start:stop, None, :] - y[None, :, :]
        np.einsum("ijk,ijk->ij", diff, diff, out=out[start:stop])
    return out
