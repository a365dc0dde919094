# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled elementwise, activation, and reduction kernels.

Mirrors the public API of ``_kernels_py`` (the pure-NumPy reference
implementation) function for function; ``backend`` picks one of the two
at import time.

The compiled win comes from fusing what NumPy must do in several
dispatches with temporaries: every gradient kernel (g·(1−y²) and
friends), sigmoid/softplus at the small sizes that dominate
single-window forecasting, and rank-2 column/row reductions. Ops that
are a single NumPy ufunc call (tanh, exp, log, square, the arithmetic
binaries) delegate to the reference implementation — NumPy's vectorized
loops are already optimal there, and delegation keeps the two backends
bit-identical on those ops.

Matrix products are *not* here on purpose: those go straight to BLAS via
``numpy`` in both backends.
"""

from libc.math cimport exp as c_exp, log1p as c_log1p

import numpy as np

from . import _kernels_py as _ref

COMPILED = True

# Below this many elements, scalar loops beat NumPy's multi-dispatch
# composites for sigmoid/softplus; above it, SIMD wins.
DEF CROSSOVER = 1024


cdef inline double _sig(double x) noexcept nogil:
    cdef double z
    if x >= 0.0:
        z = c_exp(-x)
        return 1.0 / (1.0 + z)
    z = c_exp(x)
    return z / (1.0 + z)


cdef inline double _sp(double x) noexcept nogil:
    # log(1 + e^x) without overflow: x + log1p(e^-x) for x > 0
    if x > 0.0:
        return x + c_log1p(c_exp(-x))
    return c_log1p(c_exp(x))


# -- unary forward ---------------------------------------------------------

def tanh(x):
    return _ref.tanh(x)


def exp(x):
    return _ref.exp(x)


def log(x):
    return _ref.log(x)


def square(x):
    return _ref.square(x)


def sigmoid(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.size >= CROSSOVER:
        return _ref.sigmoid(arr)
    out = np.empty_like(arr)
    cdef double[::1] xv = arr.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = _sig(xv[i])
    return out


def softplus(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.size >= CROSSOVER:
        return _ref.softplus(arr)
    out = np.empty_like(arr)
    cdef double[::1] xv = arr.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = _sp(xv[i])
    return out


# -- unary backward ---------------------------------------------------------
# Each of these is 2–4 NumPy dispatches in the reference implementation;
# one fused pass wins at every size.

cdef _unary_grad(object a, object g, int op):
    arr = np.ascontiguousarray(a, dtype=np.float64)
    garr = np.ascontiguousarray(g, dtype=np.float64)
    out = np.empty_like(garr)
    cdef double[::1] av = arr.reshape(-1)
    cdef double[::1] gv = garr.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i, n = av.shape[0]
    cdef double v
    with nogil:
        for i in range(n):
            v = av[i]
            if op == 0:          # a = tanh(x)
                ov[i] = gv[i] * (1.0 - v * v)
            elif op == 1:        # a = sigmoid(x)
                ov[i] = gv[i] * v * (1.0 - v)
            elif op == 2:        # a = x, d softplus = sigmoid(x)
                ov[i] = gv[i] * _sig(v)
            elif op == 3:        # a = exp(x)
                ov[i] = gv[i] * v
            elif op == 4:        # a = x
                ov[i] = gv[i] / v
            else:                # a = x, d x^2 = 2x
                ov[i] = 2.0 * v * gv[i]
    return out


def tanh_grad(y, g):
    return _unary_grad(y, g, 0)


def sigmoid_grad(y, g):
    return _unary_grad(y, g, 1)


def softplus_grad(x, g):
    return _unary_grad(x, g, 2)


def exp_grad(y, g):
    return _unary_grad(y, g, 3)


def log_grad(x, g):
    return _unary_grad(x, g, 4)


def square_grad(x, g):
    return _unary_grad(x, g, 5)


# -- binary / misc: single-dispatch in NumPy, so delegate ---------------------

def add(a, b):
    return _ref.add(a, b)


def sub(a, b):
    return _ref.sub(a, b)


def mul(a, b):
    return _ref.mul(a, b)


def neg(x):
    return _ref.neg(x)


def scale(x, alpha):
    return _ref.scale(x, alpha)


def sum_all(x):
    return _ref.sum_all(x)


# -- reductions ---------------------------------------------------------------

def sum_to(x, shape):
    """Sum `x` down to `shape` (same rank; reduced axes are length 1).

    Always returns a freshly owned array, even when no axis is reduced.
    """
    arr = np.asarray(x, dtype=np.float64)
    shape = tuple(shape)
    if arr.shape == shape:
        return arr.copy()
    if arr.ndim == 2 and len(shape) == 2:
        return _sum_to2(np.ascontiguousarray(arr), shape[0], shape[1])
    return _ref.sum_to(arr, shape)


cdef _sum_to2(double[:, ::1] x, Py_ssize_t tr, Py_ssize_t tc):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t i, j
    out = np.zeros((tr, tc))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(r):
            for j in range(c):
                o[i if tr > 1 else 0, j if tc > 1 else 0] += x[i, j]
    return out
