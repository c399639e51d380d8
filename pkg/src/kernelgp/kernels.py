"""Kernel functions and their analytic length-scale derivatives.

Supported kernels, with ``r = |u - v|``:

* Gaussian:     ``k(r) = exp(-r^2 / (2 l^2))``
* Matern 3/2:   ``k(r) = (1 + sqrt(3) r / l) exp(-sqrt(3) r / l)``
* Matern 5/2:   ``k(r) = (1 + sqrt(5) r / l + 5 r^2 / (3 l^2)) exp(-sqrt(5) r / l)``

and their derivatives with respect to the length scale l:

* Gaussian:     ``dk/dl = k(r) * r^2 / l^3``
* Matern 3/2:   ``dk/dl = 3 r^2 / l^3 * exp(-sqrt(3) r / l)``
* Matern 5/2:   ``dk/dl = 5 r^2 / (3 l^3) * (1 + sqrt(5) r / l) * exp(-sqrt(5) r / l)``

The derivative expressions are written in terms of ``r^2`` so the ``r = 0``
limit is an ordinary evaluation (no 0/0). All entries lie in (0, 1] with a
unit diagonal; derivatives are nonnegative (every kernel widens as l grows).
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from kernelgp.backends import get_backend


class KernelType(Enum):
    GAUSSIAN = "gaussian"
    MATERN32 = "matern32"
    MATERN52 = "matern52"

    @classmethod
    def from_name(cls, name: str) -> "KernelType":
        try:
            return cls(name.strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown kernel {name!r}; expected one of: {names}") from None


def as_points(x, name: str = "points") -> np.ndarray:
    """Validate and convert an array-like to an (n, d) float64 point set."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a nonempty 2-d array, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _check_pair(x, y):
    x = as_points(x, "X")
    y = as_points(y, "Y")
    if x.shape[1] != y.shape[1]:
        raise ValueError(
            f"point sets disagree on dimension: X has d={x.shape[1]}, Y has d={y.shape[1]}"
        )
    return x, y


def _check_lengthscale(l: float) -> float:
    l = float(l)
    if not (l > 0.0) or not np.isfinite(l):
        raise ValueError(f"length scale must be positive and finite, got {l}")
    return l


def pairwise_sq_dist(x, y) -> np.ndarray:
    """Squared Euclidean distances between all rows of X and all rows of Y."""
    x, y = _check_pair(x, y)
    out = np.empty((x.shape[0], y.shape[0]))
    return get_backend().sqdist_panel(x, y, out)


def eval_kernel(kt: KernelType, x, y, l: float) -> np.ndarray:
    """Kernel matrix with entry (i, j) = k(X_i, Y_j; l)."""
    x, y = _check_pair(x, y)
    l = _check_lengthscale(l)
    backend = get_backend()
    out = np.empty((x.shape[0], y.shape[0]))
    return backend.KERNEL_PANELS[kt.value](x, y, l, out)


def eval_kernel_grad_l(kt: KernelType, x, y, l: float) -> np.ndarray:
    """Entrywise derivative of the kernel matrix with respect to l."""
    x, y = _check_pair(x, y)
    l = _check_lengthscale(l)
    backend = get_backend()
    out = np.empty((x.shape[0], y.shape[0]))
    return backend.GRAD_PANELS[kt.value](x, y, l, out)
