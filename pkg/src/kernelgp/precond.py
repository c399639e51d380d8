"""Low-rank-plus-shift preconditioner for the regularized kernel matrix.

Approximates ``Khat = f^2 K + s I`` by the landmark (Nystrom) form

    M = f^2 * K_nm @ inv(K_mm) @ K_mn + s * I

with landmarks picked by deterministic farthest-point sampling. ``M`` is SPD
for s > 0 and ``inv(M)`` applies in O(n m) per vector through the Woodbury
identity. For numerical robustness the low-rank part is kept in factored
form ``V = K_nm @ inv(L)^T`` (L the Cholesky factor of the ridged K_mm), so
``M = s I + f^2 V V^T`` and the Woodbury capacitance

    C = I / f^2 + V^T V / s

stays positive definite even when the kernel spectrum decays below machine
precision; folding inv(K_mm) into a plain capacitance instead loses
definiteness exactly in the smooth-kernel cases preconditioning targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, solve_triangular

from kernelgp.errors import BreakdownError
from kernelgp.kernels import as_points, eval_kernel
from kernelgp.kmat import KernelEngine

RIDGE_SCALE = 1e-10


def default_rank(n: int) -> int:
    """Landmark count keeping build cost O(n m^2) subordinate to solve cost."""
    return min(int(np.ceil(np.sqrt(n))) * 4, 500, n)


def fps_select(x, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest-point sampling of m landmark indices.

    Starts from ``seed_index``; each next pick maximizes the minimum squared
    distance to the already-selected set, ties broken by lowest index. Fully
    deterministic in its inputs.
    """
    x = as_points(x, "X")
    n = x.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index {seed_index} out of range for n={n}")
    selected = np.empty(m, dtype=np.intp)
    selected[0] = seed_index
    min_sq = np.sum((x - x[seed_index]) ** 2, axis=1)
    for i in range(1, m):
        idx = int(np.argmax(min_sq))  # argmax returns the lowest index on ties
        selected[i] = idx
        np.minimum(min_sq, np.sum((x - x[idx]) ** 2, axis=1), out=min_sq)
    return selected


@dataclass
class NystromPreconditioner:
    landmark_indices: np.ndarray
    shift: float  # = s
    _v: np.ndarray = field(repr=False)  # K_nm @ inv(L)^T
    _cap_cho: tuple = field(repr=False)  # cholesky of I/f^2 + V^T V / s
    _f2: float = field(repr=False)

    @property
    def rank(self) -> int:
        return len(self.landmark_indices)

    def apply_inverse(self, b) -> np.ndarray:
        """inv(M) @ B via Woodbury; cost O(n m k)."""
        b = np.asarray(b, dtype=np.float64)
        squeeze = b.ndim == 1
        if squeeze:
            b = b[:, None]
        s = self.shift
        y = cho_solve(self._cap_cho, self._v.T @ b)
        out = b / s - (self._v @ y) / (s * s)
        return out[:, 0] if squeeze else out

    def apply(self, b) -> np.ndarray:
        """M @ B (mainly for roundtrip checks)."""
        b = np.asarray(b, dtype=np.float64)
        squeeze = b.ndim == 1
        if squeeze:
            b = b[:, None]
        out = self.shift * b + self._f2 * (self._v @ (self._v.T @ b))
        return out[:, 0] if squeeze else out


def build(engine: KernelEngine, m: int | None = None) -> NystromPreconditioner:
    """Build the landmark preconditioner for an engine's Khat."""
    n = engine.n
    if m is None:
        m = default_rank(n)
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    p = engine.params
    idx = fps_select(engine.x, m, seed_index=0)
    xm = engine.x[idx]
    kmm = eval_kernel(engine.kt, xm, xm, p.l)
    ridge = RIDGE_SCALE * np.trace(kmm) / m
    kmm[np.diag_indices_from(kmm)] += ridge
    f2 = p.f * p.f
    try:
        lower = cholesky(kmm, lower=True)
        v = solve_triangular(lower, eval_kernel(engine.kt, xm, engine.x, p.l), lower=True).T
        cap = (v.T @ v) / p.s
        cap[np.diag_indices_from(cap)] += 1.0 / f2
        cap_cho = cho_factor(cap, lower=True)
    except LinAlgError as exc:
        raise BreakdownError(
            f"landmark factorization failed even after ridge {ridge:.3e}; "
            "increase the noise term s or reduce the rank m"
        ) from exc
    return NystromPreconditioner(
        landmark_indices=idx,
        shift=p.s,
        _v=v,
        _cap_cho=cap_cho,
        _f2=f2,
    )
