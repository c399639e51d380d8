"""Regularized kernel matrix engine.

Represents ``Khat = f^2 * k(X, X; l) + s * I`` behind a matmul interface with
two interchangeable execution modes:

* ``DENSE`` materializes Khat once (n^2 storage) and multiplies with BLAS.
* ``ON_THE_FLY`` streams the kernel matrix in row panels of ``block_size``
  rows: each panel is evaluated, multiplied into the output, and discarded,
  so peak scratch is O(block_size * (n + k)) beyond inputs and output.

Engines are immutable; changing hyperparameters means building a new engine.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from math import isfinite

import numpy as np

from kernelgp.backends import get_backend
from kernelgp.errors import ResourceLimitError
from kernelgp.kernels import KernelType, as_points

DEFAULT_BLOCK_SIZE = 256
DEFAULT_DENSE_BUDGET = 20000


@dataclass(frozen=True)
class Hyperparams:
    """Length scale l, signal scale f, and noise term s; all strictly positive."""

    l: float
    f: float
    s: float

    def __post_init__(self):
        for name in ("l", "f", "s"):
            v = float(getattr(self, name))
            if not (v > 0.0 and isfinite(v)):
                raise ValueError(f"hyperparameter {name} must be positive and finite, got {v}")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.l, self.f, self.s])


class Theta(Enum):
    """Selects which hyperparameter a derivative is taken against."""

    L = "l"
    F = "f"
    S = "s"


class EngineMode(Enum):
    DENSE = "dense"
    ON_THE_FLY = "on_the_fly"


def _as_matrix(b, n: int):
    b = np.asarray(b, dtype=np.float64)
    squeeze = b.ndim == 1
    if squeeze:
        b = b[:, None]
    if b.ndim != 2 or b.shape[0] != n:
        raise ValueError(f"B must have {n} rows, got shape {b.shape}")
    if b.shape[1] < 1:
        raise ValueError("B must have at least one column")
    if not np.all(np.isfinite(b)):
        raise ValueError("B contains non-finite entries")
    return b, squeeze


class KernelEngine:
    """Matmul handle for Khat = f^2 * k(X, X; l) + s * I and its derivatives."""

    def __init__(
        self,
        kt: KernelType,
        x,
        params: Hyperparams,
        mode: EngineMode | None = None,
        block_size: int = DEFAULT_BLOCK_SIZE,
        dense_budget: int = DEFAULT_DENSE_BUDGET,
        backend: str | None = None,
    ):
        self.kt = kt
        self.x = as_points(x, "X").copy()  # private copy; engine never aliases caller data
        self.params = params
        self.n = self.x.shape[0]
        if mode is None:
            mode = EngineMode.DENSE if self.n <= dense_budget else EngineMode.ON_THE_FLY
        self.mode = mode
        if block_size < 1:
            raise ValueError("block_size must be >= 1")
        self.block_size = int(block_size)
        self.dense_budget = int(dense_budget)
        self._backend = get_backend(backend)
        self._khat = None  # dense cache, built lazily

        self.x.setflags(write=False)

    # -- dense path ---------------------------------------------------------

    def materialize(self) -> np.ndarray:
        """Dense Khat. Entry formulas are symmetric in floating point, so the
        result is bitwise symmetric without an explicit mirror pass."""
        if self._khat is None:
            if self.n > self.dense_budget:
                raise ResourceLimitError(
                    f"materializing {self.n} points exceeds the dense budget of "
                    f"{self.dense_budget}; raise dense_budget or use ON_THE_FLY mode"
                )
            p = self.params
            k = np.empty((self.n, self.n))
            self._backend.KERNEL_PANELS[self.kt.value](self.x, self.x, p.l, k)
            k *= p.f * p.f
            k[np.diag_indices_from(k)] += p.s
            k.setflags(write=False)
            self._khat = k
        return self._khat

    def materialize_grad(self, theta: Theta) -> np.ndarray:
        """Dense dKhat/dtheta (exact-path use only; not cached)."""
        if self.n > self.dense_budget:
            raise ResourceLimitError(
                f"materializing {self.n} points exceeds the dense budget of {self.dense_budget}"
            )
        p = self.params
        if theta is Theta.S:
            return np.eye(self.n)
        out = np.empty((self.n, self.n))
        if theta is Theta.L:
            self._backend.GRAD_PANELS[self.kt.value](self.x, self.x, p.l, out)
            out *= p.f * p.f
        else:
            self._backend.KERNEL_PANELS[self.kt.value](self.x, self.x, p.l, out)
            out *= 2.0 * p.f
        return out

    # -- matmul -------------------------------------------------------------

    def matmul(self, b) -> np.ndarray:
        """Khat @ B."""
        b, squeeze = _as_matrix(b, self.n)
        if self.mode is EngineMode.DENSE:
            out = self.materialize() @ b
        else:
            out = self._streamed_matmul(b, grad=None)
        return out[:, 0] if squeeze else out

    def grad_matmul(self, theta: Theta, b) -> np.ndarray:
        """(dKhat/dtheta) @ B."""
        b, squeeze = _as_matrix(b, self.n)
        if theta is Theta.S:
            out = b.copy()
        elif self.mode is EngineMode.DENSE:
            out = self.materialize_grad(theta) @ b
        else:
            out = self._streamed_matmul(b, grad=theta)
        return out[:, 0] if squeeze else out

    def _streamed_matmul(self, b: np.ndarray, grad: Theta | None) -> np.ndarray:
        p = self.params
        if grad is None:
            panel_fn = self._backend.KERNEL_PANELS[self.kt.value]
            scale = p.f * p.f
        elif grad is Theta.L:
            panel_fn = self._backend.GRAD_PANELS[self.kt.value]
            scale = p.f * p.f
        else:  # Theta.F
            panel_fn = self._backend.KERNEL_PANELS[self.kt.value]
            scale = 2.0 * p.f

        n, k = self.n, b.shape[1]
        bs = min(self.block_size, n)
        out = np.empty((n, k))
        buf = np.empty((bs, n))
        for i0 in range(0, n, bs):
            i1 = min(i0 + bs, n)
            panel = buf[: i1 - i0]
            panel_fn(self.x[i0:i1], self.x, p.l, panel)
            np.dot(panel, b, out=out[i0:i1])
            out[i0:i1] *= scale
            if grad is None:
                out[i0:i1] += p.s * b[i0:i1]
        return out
