"""GP regression loss, gradient, and prediction.

The training objective is the negative log marginal likelihood

    L = 1/2 * (y^T inv(Khat) y + log|Khat| + n log 2 pi)

with gradient, per hyperparameter theta in {l, f, s},

    dL/dtheta = 1/2 * (-w^T (dKhat/dtheta) w + tr(inv(Khat) dKhat/dtheta)),
    w = inv(Khat) y.

Two routes compute both quantities:

* exact: dense Cholesky factorization (small/moderate n; also the oracle the
  iterative route is validated against),
* iterative: PCG for the solves, Hutchinson probes for the trace terms, and
  stochastic Lanczos quadrature for log|Khat|. Probe solves are reused for
  both estimators, so each probe costs one unpreconditioned CG solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from kernelgp import precond as precond_mod
from kernelgp import solver
from kernelgp.errors import NumericalError
from kernelgp.kernels import KernelType, as_points, eval_kernel
from kernelgp.kmat import (
    DEFAULT_BLOCK_SIZE,
    DEFAULT_DENSE_BUDGET,
    EngineMode,
    Hyperparams,
    KernelEngine,
    Theta,
)

LOG_2PI = math.log(2.0 * math.pi)

DEFAULT_NUM_PROBES = 16


@dataclass
class LossGrad:
    loss: float
    grad_l: float
    grad_f: float
    grad_s: float
    converged: bool = True  # False when an inner solve hit max_iter

    def grads(self) -> np.ndarray:
        return np.array([self.grad_l, self.grad_f, self.grad_s])


@dataclass
class Prediction:
    mean: np.ndarray
    stddev: np.ndarray


class ProbeSet:
    """Standard-normal probe block, reproducible from its seed."""

    def __init__(self, vectors: np.ndarray, rng_seed=None):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] < 1:
            raise ValueError("probe vectors must form an n x k_z matrix")
        self.vectors = vectors
        self.rng_seed = rng_seed
        self.norms_sq = np.einsum("ij,ij->j", vectors, vectors)

    @property
    def k_z(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def generate(cls, n: int, k_z: int, rng_seed) -> "ProbeSet":
        if k_z < 1:
            raise ValueError("need at least one probe")
        rng = np.random.default_rng(rng_seed)
        return cls(rng.standard_normal((n, k_z)), rng_seed)


def _check_y(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != n:
        raise ValueError(f"y must have length {n}, got {y.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite entries")
    return y


def _cholesky(khat):
    try:
        return cho_factor(khat, lower=True)
    except LinAlgError as exc:
        raise NumericalError(
            "Cholesky factorization failed; Khat is not SPD, which should be "
            "impossible for s > 0 and indicates a kernel bug"
        ) from exc


def nlml_exact(engine: KernelEngine, y) -> float:
    """Dense-path loss: factorize Khat once, read log|Khat| off the factor."""
    y = _check_y(y, engine.n)
    cf = _cholesky(engine.materialize())
    w = cho_solve(cf, y)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    return 0.5 * (float(y @ w) + logdet + engine.n * LOG_2PI)


def grad_exact(engine: KernelEngine, y) -> LossGrad:
    """Dense-path loss and gradient via one factorization of Khat."""
    y = _check_y(y, engine.n)
    khat = engine.materialize()
    cf = _cholesky(khat)
    w = cho_solve(cf, y)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    loss = 0.5 * (float(y @ w) + logdet + engine.n * LOG_2PI)
    grads = {}
    for theta in Theta:
        dk = engine.materialize_grad(theta)
        quad = -float(w @ dk @ w)
        tr = float(np.trace(cho_solve(cf, dk)))
        grads[theta] = 0.5 * (quad + tr)
    return LossGrad(loss, grads[Theta.L], grads[Theta.F], grads[Theta.S])


def nlml_grad_iterative(
    engine,
    y,
    preconditioner,
    probes: ProbeSet,
    tol: float = solver.DEFAULT_TOL,
    max_iter: int = solver.DEFAULT_MAX_ITER,
    probe_tol: float | None = None,
) -> LossGrad:
    """Matrix-free loss and gradient from one probe set.

    The data solve Khat w = y runs preconditioned; the probe solves
    Khat u_i = z_i run unpreconditioned so their coefficients reconstruct
    Lanczos tridiagonals of Khat itself, feeding the log-determinant
    estimate. The same u_i then serve the Hutchinson trace terms
    tr(inv(Khat) dK) ~= mean_i(u_i^T dK z_i). Per theta, all derivative
    products [w, z_1, ..., z_k] go through a single batched matmul.

    ``probe_tol`` defaults to ``tol``; probe solves tolerate looser targets
    than the data solve, so callers chasing speed can relax it separately.
    """
    n = engine.n
    y = _check_y(y, n)
    if probes.vectors.shape[0] != n:
        raise ValueError(f"probes have {probes.vectors.shape[0]} rows, need {n}")
    if probe_tol is None:
        probe_tol = tol
    minv = preconditioner.apply_inverse if preconditioner is not None else None

    w_report = solver.pcg_solve(engine.matmul, minv, y, tol=tol, max_iter=max_iter)
    w = w_report.solution
    u_report = solver.pcg_solve(
        engine.matmul, None, probes.vectors, tol=probe_tol, max_iter=max_iter
    )
    logdet = solver.slq_logdet(u_report.traces, probes.norms_sq)
    loss = 0.5 * (float(y @ w) + logdet + n * LOG_2PI)

    u = u_report.solution
    v = np.column_stack([w, probes.vectors])
    grads = {}
    for theta in Theta:
        dv = engine.grad_matmul(theta, v)
        quad = -float(w @ dv[:, 0])
        tr = float(np.einsum("ij,ij->", u, dv[:, 1:])) / probes.k_z
        grads[theta] = 0.5 * (quad + tr)
    ok = w_report.all_converged and u_report.all_converged
    return LossGrad(loss, grads[Theta.L], grads[Theta.F], grads[Theta.S], converged=ok)


def predict(
    kt: KernelType,
    x,
    y,
    xstar,
    params: Hyperparams,
    mode: str = "exact",
    tol: float = solver.DEFAULT_TOL,
    max_iter: int = solver.DEFAULT_MAX_ITER,
    precond_rank: int | None = None,
    block_size: int = DEFAULT_BLOCK_SIZE,
    dense_budget: int = DEFAULT_DENSE_BUDGET,
) -> Prediction:
    """Posterior mean and latent-function stddev at the test points.

    Conditioning the joint Gaussian on the training observations gives

        mean = f^2 k(X*, X) inv(Khat) y
        var  = f^2 - diag(f^2 k(X*, X) inv(Khat) f^2 k(X, X*))

    (test-test prior variance is f^2 exactly: kernels have unit diagonal and
    no noise is added to test points, so stddev is of the latent function,
    not of a noisy observation). Tiny negative variances from finite solver
    accuracy are clamped to zero before the square root.
    """
    if mode not in ("exact", "iterative"):
        raise ValueError(f"mode must be 'exact' or 'iterative', got {mode!r}")
    x = as_points(x, "X")
    n = x.shape[0]
    y = _check_y(y, n)
    xstar = np.asarray(xstar, dtype=np.float64)
    if xstar.ndim == 1:
        xstar = xstar[:, None]
    if xstar.size == 0:
        return Prediction(mean=np.empty(0), stddev=np.empty(0))
    xstar = as_points(xstar, "Xstar")
    if xstar.shape[1] != x.shape[1]:
        raise ValueError(
            f"train/test dimension mismatch: d={x.shape[1]} vs d={xstar.shape[1]}"
        )

    f2 = params.f * params.f
    cross = f2 * eval_kernel(kt, x, xstar, params.l)  # n x m_test
    rhs = np.column_stack([y, cross])

    if mode == "exact":
        engine = KernelEngine(
            kt, x, params, mode=EngineMode.DENSE, dense_budget=dense_budget
        )
        sol = cho_solve(_cholesky(engine.materialize()), rhs)
    else:
        engine = KernelEngine(kt, x, params, block_size=block_size, dense_budget=dense_budget)
        pre = precond_mod.build(engine, precond_rank)
        report = solver.pcg_solve(
            engine.matmul, pre.apply_inverse, rhs, tol=tol, max_iter=max_iter
        )
        sol = report.solution

    w = sol[:, 0]
    mean = cross.T @ w
    var = f2 - np.einsum("ij,ij->j", cross, sol[:, 1:])
    stddev = np.sqrt(np.maximum(var, 0.0))
    return Prediction(mean=mean, stddev=stddev)
