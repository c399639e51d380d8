"""Matrix-free Gaussian process regression.

Kernel matrices are exposed through a matmul engine (dense or streamed in
blocks), hyperparameters train by minimizing the negative log marginal
likelihood with hand-derived gradients, and large problems run through
preconditioned conjugate gradients with stochastic trace and
log-determinant estimation. A dense Cholesky path serves small problems
and doubles as the correctness oracle for the iterative one.

Submodules are imported lazily so the command-line entry point can pin
thread settings before numpy loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "KernelType": "kernelgp.kernels",
    "pairwise_sq_dist": "kernelgp.kernels",
    "eval_kernel": "kernelgp.kernels",
    "eval_kernel_grad_l": "kernelgp.kernels",
    "Hyperparams": "kernelgp.kmat",
    "Theta": "kernelgp.kmat",
    "EngineMode": "kernelgp.kmat",
    "KernelEngine": "kernelgp.kmat",
    "fps_select": "kernelgp.precond",
    "NystromPreconditioner": "kernelgp.precond",
    "CgTrace": "kernelgp.solver",
    "SolveReport": "kernelgp.solver",
    "cg_solve": "kernelgp.solver",
    "pcg_solve": "kernelgp.solver",
    "build_tridiag": "kernelgp.solver",
    "slq_logdet": "kernelgp.solver",
    "LossGrad": "kernelgp.gp",
    "Prediction": "kernelgp.gp",
    "ProbeSet": "kernelgp.gp",
    "nlml_exact": "kernelgp.gp",
    "grad_exact": "kernelgp.gp",
    "nlml_grad_iterative": "kernelgp.gp",
    "predict": "kernelgp.gp",
    "RawParams": "kernelgp.train",
    "TrainConfig": "kernelgp.train",
    "TrainResult": "kernelgp.train",
    "fit": "kernelgp.train",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        import importlib

        module = importlib.import_module(_EXPORTS[name])
        value = getattr(module, name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
