"""Pure-numpy versions of the compiled kernels.

Results are bitwise identical to ``_kernels``: matmul accumulates each
output element over the inner index in ascending order, one rounded
product and one rounded add per step, and the Adam update performs the
same rounded operations in the same order.
"""

import numpy as np


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    if b.shape[0] != k:
        raise ValueError(f"inner dimensions differ: {k} vs {b.shape[0]}")
    out = np.zeros((m, b.shape[1]), dtype=np.float64)
    tmp = np.empty_like(out)
    for p in range(k):
        np.multiply(a[:, p, None], b[p], out=tmp)
        out += tmp
    return out


def adam_update(p, g, m, v, beta1, beta2, bc1, bc2, lr, eps):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= (lr * (m * (1.0 / bc1))) / (np.sqrt(v * (1.0 / bc2)) + eps)
