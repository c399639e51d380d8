"""Gradient-based hyperparameter optimization of the GP loss.

Hyperparameters are optimized in an unconstrained space through the softplus
map theta = log(1 + exp(rho)), which keeps l, f, s strictly positive and the
kernel matrix SPD at every step. Steps come from a self-contained Adam
implementation; in iterative mode the probe set is redrawn every step so no
single probe draw biases the trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from kernelgp import gp, precond, solver
from kernelgp.errors import KernelGpError
from kernelgp.kernels import KernelType, as_points
from kernelgp.kmat import (
    DEFAULT_BLOCK_SIZE,
    DEFAULT_DENSE_BUDGET,
    Hyperparams,
    KernelEngine,
)

GRAD_NORM_TOL = 1e-6


def softplus(rho):
    """log(1 + exp(rho)), stable for large |rho|."""
    rho = np.asarray(rho, dtype=np.float64)
    return np.maximum(rho, 0.0) + np.log1p(np.exp(-np.abs(rho)))


def softplus_inv(theta):
    """rho with softplus(rho) = theta, stable for large theta."""
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta <= 0):
        raise ValueError("softplus_inv needs positive inputs")
    # log(e^theta - 1) = theta + log(1 - e^-theta)
    return theta + np.log(-np.expm1(-theta))


def sigmoid(rho):
    rho = np.asarray(rho, dtype=np.float64)
    out = np.empty_like(rho)
    pos = rho >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-rho[pos]))
    e = np.exp(rho[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class RawParams:
    """Unconstrained parameters; softplus maps them to Hyperparams."""

    rho_l: float
    rho_f: float
    rho_s: float

    def as_array(self) -> np.ndarray:
        return np.array([self.rho_l, self.rho_f, self.rho_s])

    def to_hyperparams(self) -> Hyperparams:
        l, f, s = softplus(self.as_array())
        return Hyperparams(l=float(l), f=float(f), s=float(s))

    @classmethod
    def from_array(cls, arr) -> "RawParams":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    @classmethod
    def from_hyperparams(cls, hp: Hyperparams) -> "RawParams":
        return cls.from_array(softplus_inv(hp.as_array()))


def chain_grads(raw: RawParams, theta_grads) -> np.ndarray:
    """Pull (dL/dl, dL/df, dL/ds) back to rho-space: dL/drho = dL/dtheta * sigmoid(rho)."""
    return np.asarray(theta_grads, dtype=np.float64) * sigmoid(raw.as_array())


class Adam:
    """Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, learning_rate: float, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads) -> np.ndarray:
        params = np.asarray(params, dtype=np.float64)
        grads = np.asarray(grads, dtype=np.float64)
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads**2
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class TrainStatus(Enum):
    MAX_STEPS = "max_steps"
    GRAD_TOL = "grad_tol"
    SOLVER_WARNING = "solver_warning"


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    max_steps: int = 100
    mode: str = "exact"  # "exact" | "iterative"
    k_z: int = gp.DEFAULT_NUM_PROBES
    tol: float = solver.DEFAULT_TOL
    probe_tol: float = solver.DEFAULT_PROBE_TOL
    max_iter: int = solver.DEFAULT_MAX_ITER
    precond_rank: int | None = None
    rng_seed: int = 0
    block_size: int = DEFAULT_BLOCK_SIZE
    dense_budget: int = DEFAULT_DENSE_BUDGET
    grad_norm_tol: float = GRAD_NORM_TOL

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.mode not in ("exact", "iterative"):
            raise ValueError(f"mode must be 'exact' or 'iterative', got {self.mode!r}")


@dataclass
class TrainResult:
    params: Hyperparams
    raw: RawParams
    loss_history: list[float] = field(default_factory=list)
    grad_norm_history: list[float] = field(default_factory=list)
    status: TrainStatus = TrainStatus.MAX_STEPS


def initial_hyperparams(x, y, rng_seed=0) -> Hyperparams:
    """Data-driven starting point.

    l: median pairwise distance of a subsample of at most 1000 points,
    f: stddev of y, s: 1 percent of the variance of y. Each is floored at
    1e-6 so degenerate data still yields valid (positive) hyperparameters.
    """
    x = as_points(x, "X")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    if n > 1000:
        rng = np.random.default_rng(rng_seed)
        sub = x[rng.choice(n, size=1000, replace=False)]
    else:
        sub = x
    from kernelgp.kernels import pairwise_sq_dist

    d2 = pairwise_sq_dist(sub, sub)
    off = d2[np.triu_indices_from(d2, k=1)]
    l = float(np.median(np.sqrt(off))) if off.size else 1.0
    f = float(np.std(y))
    s = 0.01 * float(np.var(y))
    return Hyperparams(l=max(l, 1e-6), f=max(f, 1e-6), s=max(s, 1e-6))


def fit(kt: KernelType, x, y, config: TrainConfig) -> TrainResult:
    """Minimize the GP loss over (l, f, s) with Adam in softplus space.

    Stops at ``max_steps`` or when the rho-space gradient norm drops below
    ``grad_norm_tol``. Solver trouble inside a step is attached to the step
    index; iterative-mode non-convergence only downgrades the final status.
    """
    x = as_points(x, "X")
    n = x.shape[0]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != n:
        raise ValueError(f"y must have length {n}, got {y.shape[0]}")

    raw = RawParams.from_hyperparams(initial_hyperparams(x, y, config.rng_seed))
    adam = Adam(config.learning_rate)
    loss_history: list[float] = []
    grad_norm_history: list[float] = []
    status = TrainStatus.MAX_STEPS
    saw_warning = False

    for step in range(config.max_steps):
        hp = raw.to_hyperparams()
        engine = KernelEngine(
            kt,
            x,
            hp,
            block_size=config.block_size,
            dense_budget=config.dense_budget,
        )
        try:
            if config.mode == "exact":
                lg = gp.grad_exact(engine, y)
            else:
                probes = gp.ProbeSet.generate(n, config.k_z, (config.rng_seed, step))
                pre = precond.build(engine, config.precond_rank)
                lg = gp.nlml_grad_iterative(
                    engine,
                    y,
                    pre,
                    probes,
                    tol=config.tol,
                    max_iter=config.max_iter,
                    probe_tol=config.probe_tol,
                )
        except KernelGpError as exc:
            raise type(exc)(f"step {step}: {exc}") from exc
        saw_warning = saw_warning or not lg.converged
        rho_grads = chain_grads(raw, lg.grads())
        gnorm = float(np.linalg.norm(rho_grads))
        loss_history.append(lg.loss)
        grad_norm_history.append(gnorm)
        if gnorm < config.grad_norm_tol:
            status = TrainStatus.GRAD_TOL
            break
        raw = RawParams.from_array(adam.step(raw.as_array(), rho_grads))

    if saw_warning:
        status = TrainStatus.SOLVER_WARNING
    return TrainResult(
        params=raw.to_hyperparams(),
        raw=raw,
        loss_history=loss_history,
        grad_norm_history=grad_norm_history,
        status=status,
    )
