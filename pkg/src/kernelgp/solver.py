"""Conjugate gradient solvers with Lanczos coefficient capture.

``cg_solve`` is the plain single-vector iteration: starting from
``r0 = y - A x0`` and ``p0 = r0`` it repeats

    alpha_j = (r_j . r_j) / (p_j . A p_j)
    x_{j+1} = x_j + alpha_j p_j
    r_{j+1} = r_j - alpha_j A p_j
    beta_j  = (r_{j+1} . r_{j+1}) / (r_j . r_j)
    p_{j+1} = r_{j+1} + beta_j p_j

recording every alpha and beta. Those coefficients reconstruct the Lanczos
tridiagonal of the operator restricted to the Krylov space
(``build_tridiag``), whose Ritz values drive the stochastic log-determinant
estimate (``slq_logdet``):

    log|A| = tr(log A) ~= (1/k) sum_i |z_i|^2 * e1^T log(T_{z_i}) e1

for i.i.d. standard-normal probes z_i solved by unpreconditioned CG.

``pcg_solve`` runs preconditioned CG on a block of right-hand sides at once:
every iteration issues one n-by-k operator call for all still-active columns,
converged columns freeze in place so matmul shapes stay fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from kernelgp.errors import BreakdownError, NumericalError

DEFAULT_TOL = 1e-6
DEFAULT_PROBE_TOL = 1e-2
DEFAULT_MAX_ITER = 500


@dataclass
class CgTrace:
    """Per-solve coefficient record; alphas/betas have equal length m."""

    alphas: np.ndarray
    betas: np.ndarray
    iterations: int
    final_rel_residual: float


@dataclass
class SolveReport:
    solution: np.ndarray
    traces: list[CgTrace] = field(default_factory=list)
    converged: list[bool] = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return all(self.converged)

    def iteration_counts(self) -> list[int]:
        return [t.iterations for t in self.traces]


def _empty_trace(rel: float) -> CgTrace:
    return CgTrace(np.empty(0), np.empty(0), 0, rel)


def cg_solve(
    apply_a,
    y,
    x0=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
):
    """Solve A x = y for SPD operator A; returns (x, CgTrace).

    Stops at relative residual |r|/|y| <= tol or after max_iter iterations
    (pass tol=0 to always run a fixed iteration count).
    """
    if tol < 0 or max_iter < 1:
        raise ValueError("need tol >= 0 and max_iter >= 1")
    y = np.asarray(y, dtype=np.float64)
    ynorm = float(np.sqrt(y @ y))
    if ynorm == 0.0:
        return np.zeros_like(y), _empty_trace(0.0)
    if x0 is None:
        x = np.zeros_like(y)
        r = y.copy()
    else:
        x = np.array(x0, dtype=np.float64)
        r = y - apply_a(x)
    p = r.copy()
    rr = float(r @ r)
    rel = np.sqrt(rr) / ynorm
    if rel <= tol:
        return x, _empty_trace(rel)
    alphas: list[float] = []
    betas: list[float] = []
    for _ in range(max_iter):
        ap = apply_a(p)
        pap = float(p @ ap)
        if not np.isfinite(pap) or pap <= 0.0:
            raise BreakdownError(f"p^T A p = {pap}; operator is not SPD")
        alpha = rr / pap
        x = x + alpha * p
        r = r - alpha * ap
        rr_new = float(r @ r)
        if not np.isfinite(rr_new):
            raise NumericalError("residual became non-finite during CG")
        beta = rr_new / rr
        alphas.append(alpha)
        betas.append(beta)
        rr = rr_new
        rel = np.sqrt(rr) / ynorm
        if rel <= tol:
            break
        p = r + beta * p
    trace = CgTrace(np.array(alphas), np.array(betas), len(alphas), rel)
    return x, trace


def pcg_solve(
    apply_a,
    apply_minv,
    y,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SolveReport:
    """Preconditioned CG over a block of right-hand sides.

    ``apply_minv`` applies the preconditioner inverse (an SPD map); pass None
    for unpreconditioned CG. All active columns share each ``apply_a`` call;
    converged columns stop updating but keep their slot in the batch.
    """
    if tol < 0 or max_iter < 1:
        raise ValueError("need tol >= 0 and max_iter >= 1")
    y = np.asarray(y, dtype=np.float64)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    n, k = y.shape

    # state lives transposed (k, n) so every per-column reduction runs on a
    # contiguous vector, the same dot-product path cg_solve takes
    xt = np.zeros((k, n))
    rt = y.T.copy()  # unconditionally: for k=1 the transpose is already contiguous
    ynorm = np.array([float(np.sqrt(rt[j] @ rt[j])) for j in range(k)])
    alphas: list[list[float]] = [[] for _ in range(k)]
    betas: list[list[float]] = [[] for _ in range(k)]
    rel = np.where(ynorm > 0, 1.0, 0.0)
    active = rel > tol

    if np.any(active):
        zt = _apply_minv_t(apply_minv, rt)
        pt = zt.copy()
        rz = np.array([float(rt[j] @ zt[j]) for j in range(k)])
        for _ in range(max_iter):
            apt = np.ascontiguousarray(apply_a(pt.T).T)
            for j in np.nonzero(active)[0]:
                pap = float(pt[j] @ apt[j])
                if not np.isfinite(pap) or pap <= 0.0:
                    raise BreakdownError(
                        f"p^T A p = {pap} in column {j}; operator is not SPD"
                    )
                alpha = rz[j] / pap
                xt[j] += alpha * pt[j]
                rt[j] -= alpha * apt[j]
                alphas[j].append(alpha)
            zt = _apply_minv_t(apply_minv, rt)
            for j in np.nonzero(active)[0]:
                rr = float(rt[j] @ rt[j])
                if not np.isfinite(rr):
                    raise NumericalError("residual became non-finite during PCG")
                rz_new = rr if apply_minv is None else float(rt[j] @ zt[j])
                beta = rz_new / rz[j]
                betas[j].append(beta)
                rz[j] = rz_new
                rel[j] = np.sqrt(rr) / ynorm[j]
                if rel[j] <= tol:
                    active[j] = False  # freeze; the column keeps its batch slot
                else:
                    pt[j] = zt[j] + beta * pt[j]
            if not np.any(active):
                break

    traces = [
        CgTrace(np.array(alphas[j]), np.array(betas[j]), len(alphas[j]), float(rel[j]))
        for j in range(k)
    ]
    converged = [bool(rel[j] <= tol) for j in range(k)]
    solution = xt[0] if squeeze else np.ascontiguousarray(xt.T)
    return SolveReport(solution, traces, converged)


def _apply_minv_t(apply_minv, rt: np.ndarray) -> np.ndarray:
    """Apply the preconditioner to a transposed residual block."""
    if apply_minv is None:
        return rt
    return np.ascontiguousarray(apply_minv(rt.T).T)


def build_tridiag(trace: CgTrace) -> np.ndarray:
    """Lanczos tridiagonal T_m reconstructed from CG coefficients.

    With the convention alpha_{-1} = 1, beta_{-1} = 0:
    diagonal d_i = 1/alpha_{i-1} + beta_{i-2}/alpha_{i-2} and off-diagonal
    o_i = sqrt(beta_{i-1})/alpha_{i-1} (1-based i).
    """
    d, e = _tridiag_bands(trace)
    m = len(d)
    t = np.zeros((m, m))
    t[np.diag_indices(m)] = d
    if m > 1:
        idx = np.arange(m - 1)
        t[idx, idx + 1] = e
        t[idx + 1, idx] = e
    return t


def _tridiag_bands(trace: CgTrace):
    a = np.asarray(trace.alphas, dtype=np.float64)
    b = np.asarray(trace.betas, dtype=np.float64)
    m = len(a)
    if m < 1:
        raise ValueError("trace holds no iterations; T is undefined")
    if len(b) < m - 1:
        raise ValueError(f"need at least {m - 1} betas for {m} alphas, got {len(b)}")
    if np.any(a <= 0):
        raise ValueError("trace has non-positive alphas; solve was not SPD")
    if np.any(b[: m - 1] < 0):
        raise ValueError("trace has negative betas")
    d = 1.0 / a
    d[1:] += b[: m - 1] / a[: m - 1]
    e = np.sqrt(b[: m - 1]) / a[: m - 1]
    return d, e


def slq_logdet(traces: list[CgTrace], probe_norms_sq) -> float:
    """Stochastic Lanczos quadrature estimate of log|A| from probe solves.

    Averages |z_i|^2 * e1^T log(T_i) e1 over probes; log(T) is evaluated by
    dense eigendecomposition of the small tridiagonal. Probes that converged
    in zero iterations contribute zero (their Krylov space is empty).
    """
    norms_sq = np.asarray(probe_norms_sq, dtype=np.float64)
    if len(traces) != len(norms_sq):
        raise ValueError(
            f"got {len(traces)} traces but {len(norms_sq)} probe norms"
        )
    if len(traces) == 0:
        raise ValueError("need at least one probe trace")
    total = 0.0
    for trace, nz2 in zip(traces, norms_sq):
        if trace.iterations == 0:
            continue
        d, e = _tridiag_bands(trace)
        # the QR driver: slower than stemr but robust to the tightly clustered
        # Ritz values long finite-precision solves produce
        w, v = eigh_tridiagonal(d, e, lapack_driver="stev")
        if w[0] <= 0.0:
            raise NumericalError(
                f"nonpositive Ritz value {w[0]}; operator is not SPD or CG broke down"
            )
        total += nz2 * float(v[0] ** 2 @ np.log(w))
    return total / len(traces)
