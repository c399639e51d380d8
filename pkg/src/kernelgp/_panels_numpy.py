"""Pure-numpy kernel panel evaluation.

Panels are written into caller-provided buffers so the callers control peak
memory. Squared distances use the inner-product expansion
``|u - v|^2 = |u|^2 + |v|^2 - 2 u.v`` with the cross term evaluated through
``einsum`` rather than BLAS: einsum accumulates each entry independently, so
a row or column block of a panel is bitwise identical to the same entries of
the full panel regardless of tiling.
"""

import numpy as np

NAME = "numpy"

SQRT3 = np.sqrt(3.0)
SQRT5 = np.sqrt(5.0)


def sqdist_panel(xb: np.ndarray, y: np.ndarray, out: np.ndarray) -> np.ndarray:
    xx = np.einsum("ij,ij->i", xb, xb)
    yy = np.einsum("ij,ij->i", y, y)
    np.einsum("ik,jk->ij", xb, y, out=out)
    out *= -2.0
    out += xx[:, None]
    out += yy[None, :]
    # cancellation in the expansion can leave tiny negatives
    np.maximum(out, 0.0, out=out)
    return out


def gaussian_panel(xb, y, l, out):
    sqdist_panel(xb, y, out)
    out *= -1.0 / (2.0 * l * l)
    np.exp(out, out=out)
    return out


def gaussian_grad_panel(xb, y, l, out):
    sqdist_panel(xb, y, out)
    e = np.exp(out * (-1.0 / (2.0 * l * l)))
    out *= 1.0 / (l * l * l)
    out *= e
    return out


def matern32_panel(xb, y, l, out):
    sqdist_panel(xb, y, out)
    np.sqrt(out, out=out)
    out *= SQRT3 / l  # now holds t = sqrt(3) r / l
    e = np.exp(-out)
    out += 1.0
    out *= e
    return out


def matern32_grad_panel(xb, y, l, out):
    # d/dl [(1 + t) exp(-t)] with t = sqrt(3) r / l  ->  3 r^2 / l^3 * exp(-t)
    sqdist_panel(xb, y, out)
    e = np.exp(np.sqrt(out) * (-SQRT3 / l))
    out *= 3.0 / (l * l * l)
    out *= e
    return out


def matern52_panel(xb, y, l, out):
    sqdist_panel(xb, y, out)
    t = np.sqrt(out) * (SQRT5 / l)
    e = np.exp(-t)
    # out still holds r^2; (1 + t + 5 r^2 / (3 l^2)) exp(-t)
    out *= 5.0 / (3.0 * l * l)
    out += t
    out += 1.0
    out *= e
    return out


def matern52_grad_panel(xb, y, l, out):
    # d/dl [(1 + t + t^2/3) exp(-t)] with t = sqrt(5) r / l
    #   -> 5 r^2 / (3 l^3) * (1 + t) * exp(-t)
    sqdist_panel(xb, y, out)
    t = np.sqrt(out) * (SQRT5 / l)
    e = np.exp(-t)
    t += 1.0
    out *= 5.0 / (3.0 * l * l * l)
    out *= t
    out *= e
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
