"""Pure-numpy implementations of the hot elementwise kernels.

Same call signatures as the compiled core (`_core.pyx`); selected at import
time by :mod:`homol2o.kernels` when the extension is unavailable or when
``HOMOL2O_KERNELS=python`` is set.
"""

import numpy as np

COMPILED = False


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x, gy):
    # subgradient 0 at exactly 0
    return np.where(x > 0.0, gy, 0.0)


def tanh(x):
    return np.tanh(x)


def tanh_grad(y, gy):
    # y is tanh(x)
    return gy * (1.0 - y * y)


def abs_val(x):
    return np.abs(x)


def abs_grad(x, gy):
    return gy * np.sign(x)


def square_row_sum(x):
    return np.sum(x * x, axis=1, keepdims=True)


def square_row_sum_grad(x, gy):
    # gy has shape (rows, 1)
    return 2.0 * x * gy


def hinge_row_sum(x):
    return np.sum(np.maximum(x, 0.0), axis=1, keepdims=True)


def hinge_row_sum_grad(x, gy):
    return np.where(x > 0.0, gy, 0.0) * np.ones_like(x)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, t):
    """Fused in-place Adam step with bias correction on one parameter array."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
