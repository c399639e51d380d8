"""Backend selection for the hot kernel-panel loops.

Two interchangeable implementations exist: numba-jitted loops
(:mod:`kernelgp._panels_numba`) and a vectorized pure-numpy fallback
(:mod:`kernelgp._panels_numpy`). The environment variable
``KERNELGP_BACKEND`` picks the default:

* ``auto`` (or unset): numba when importable, else numpy
* ``numba``: require numba, fail loudly if missing
* ``numpy``: force the fallback

``benchmarks/bench_backends.py`` compares the two.
"""

import os

ENV_VAR = "KERNELGP_BACKEND"

_cache: dict = {}


def _load(name: str):
    if name == "numpy":
        from kernelgp import _panels_numpy as mod
    elif name == "numba":
        from kernelgp import _panels_numba as mod
    else:
        raise ValueError(f"unknown backend {name!r}; expected 'numpy' or 'numba'")
    return mod


def get_backend(name: str | None = None):
    """Return the panel module for `name`, or the env-selected default."""
    if name is None:
        name = os.environ.get(ENV_VAR, "auto").strip().lower() or "auto"
    if name in _cache:
        return _cache[name]
    if name == "auto":
        try:
            mod = _load("numba")
        except ImportError:
            mod = _load("numpy")
    else:
        mod = _load(name)
    _cache[name] = mod
    return mod


def backend_name() -> str:
    return get_backend().NAME
