"""Numba-jitted kernel panels.

Same contract as ``_panels_numpy``: write into a caller-provided buffer,
entry (i, j) depends only on row i of the block and row j of the other point
set, so blocked evaluation is bitwise identical to full evaluation. The
distance accumulation is fused into the kernel transform, which keeps each
panel pass single-sweep and allocation free.
"""

import math

import numpy as np  # noqa: F401  (kept for parity with the numpy backend)
from numba import njit, prange

NAME = "numba"

SQRT3 = math.sqrt(3.0)
SQRT5 = math.sqrt(5.0)

_JIT_OPTS = dict(parallel=True, cache=True, nogil=True)


@njit(**_JIT_OPTS)
def sqdist_panel(xb, y, out):
    nb, d = xb.shape
    m = y.shape[0]
    for i in prange(nb):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = xb[i, k] - y[j, k]
                acc += diff * diff
            out[i, j] = acc
    return out


@njit(**_JIT_OPTS)
def gaussian_panel(xb, y, l, out):
    nb, d = xb.shape
    m = y.shape[0]
    inv = 1.0 / (2.0 * l * l)
    for i in prange(nb):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = xb[i, k] - y[j, k]
                acc += diff * diff
            out[i, j] = math.exp(-acc * inv)
    return out


@njit(**_JIT_OPTS)
def gaussian_grad_panel(xb, y, l, out):
    nb, d = xb.shape
    m = y.shape[0]
    inv = 1.0 / (2.0 * l * l)
    scale = 1.0 / (l * l * l)
    for i in prange(nb):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = xb[i, k] - y[j, k]
                acc += diff * diff
            out[i, j] = acc * scale * math.exp(-acc * inv)
    return out


@njit(**_JIT_OPTS)
def matern32_panel(xb, y, l, out):
    nb, d = xb.shape
    m = y.shape[0]
    c = SQRT3 / l
    for i in prange(nb):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = xb[i, k] - y[j, k]
                acc += diff * diff
            t = c * math.sqrt(acc)
            out[i, j] = (1.0 + t) * math.exp(-t)
    return out


@njit(**_JIT_OPTS)
def matern32_grad_panel(xb, y, l, out):
    nb, d = xb.shape
    m = y.shape[0]
    c = SQRT3 / l
    scale = 3.0 / (l * l * l)
    for i in prange(nb):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = xb[i, k] - y[j, k]
                acc += diff * diff
            out[i, j] = scale * acc * math.exp(-c * math.sqrt(acc))
    return out


@njit(**_JIT_OPTS)
def matern52_panel(xb, y, l, out):
    nb, d = xb.shape
    m = y.shape[0]
    c = SQRT5 / l
    q = 5.0 / (3.0 * l * l)
    for i in prange(nb):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = xb[i, k] - y[j, k]
                acc += diff * diff
            t = c * math.sqrt(acc)
            out[i, j] = (1.0 + t + q * acc) * math.exp(-t)
    return out


@njit(**_JIT_OPTS)
def matern52_grad_panel(xb, y, l, out):
    nb, d = xb.shape
    m = y.shape[0]
    c = SQRT5 / l
    scale = 5.0 / (3.0 * l * l * l)
    for i in prange(nb):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = xb[i, k] - y[j, k]
                acc += diff * diff
            t = c * math.sqrt(acc)
            out[i, j] = scale * acc * (1.0 + t) * math.exp(-t)
    return out


KERNEL_PANELS = {
    "gaussian": gaussian_panel,
    "matern32": matern32_panel,
    "matern52": matern52_panel,
}

GRAD_PANELS = {
    "gaussian": gaussian_grad_panel,
    "matern32": matern32_grad_panel,
    "matern52": matern52_grad_panel,
}
