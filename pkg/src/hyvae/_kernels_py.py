"""NumPy fallback for the numeric kernels.

Mirrors the interface of the compiled ``hyvae._kernels`` extension; see
:mod:`hyvae.backend` for how one of the two is selected.  Binary ops accept
operands of equal shape, or rank-2 operands that differ only in axes of
length 1 (NumPy broadcasting covers both).
"""

import numpy as np

COMPILED = False


# -- unary forward ------------------------------------------------------

def tanh(x):
    return np.tanh(x)


def sigmoid(x):
    # exp(-|x|) never overflows, so both branches are safe.
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def softplus(x):
    return np.logaddexp(0.0, x)


def exp(x):
    return np.exp(x)


def log(x):
    return np.log(x)


def square(x):
    return x * x


# -- unary backward -----------------------------------------------------
# `g` is the upstream gradient; `y` the op output, `x` the op input.

def tanh_grad(y, g):
    return g * (1.0 - y * y)


def sigmoid_grad(y, g):
    return g * y * (1.0 - y)


def softplus_grad(x, g):
    return g * sigmoid(x)


def exp_grad(y, g):
    return g * y


def log_grad(x, g):
    return g / x


def square_grad(x, g):
    return 2.0 * x * g


# -- binary / misc ------------------------------------------------------

def add(a, b):
    return a + b


def sub(a, b):
    return a - b


def mul(a, b):
    return a * b


def neg(x):
    return -x


def scale(x, alpha):
    return x * alpha


def sum_all(x):
    return np.sum(x)


def sum_to(x, shape):
    """Sum `x` down to `shape` (same rank, target axes of length 1)."""
    if x.shape == tuple(shape):
        return x.copy()
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and x.shape[i] != 1)
    return np.sum(x, axis=axes, keepdims=True)
