import numpy as np
import pytest

from kernelgp.kernels import KernelType

ALL_KERNELS = [KernelType.GAUSSIAN, KernelType.MATERN32, KernelType.MATERN52]


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def dense_khat(kt, x, hp):
    """Scalar-loop oracle for f^2 k(X, X; l) + s I, independent of the engine."""
    n = x.shape[0]
    k = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            k[i, j] = hp.f**2 * kernel_scalar(kt, x[i], x[j], hp.l)
    return k + hp.s * np.eye(n)


def kernel_scalar(kt, u, v, l):
    """Direct evaluation of the closed forms on a single pair."""
    r = np.sqrt(np.sum((np.asarray(u, float) - np.asarray(v, float)) ** 2))
    if kt is KernelType.GAUSSIAN:
        return np.exp(-(r**2) / (2 * l**2))
    if kt is KernelType.MATERN32:
        t = np.sqrt(3.0) * r / l
        return (1 + t) * np.exp(-t)
    t = np.sqrt(5.0) * r / l
    return (1 + t + t**2 / 3) * np.exp(-t)
