"""Backend selection for the MLP kernels.

Two interchangeable implementations exist: ``numba_backend`` (explicit
loop kernels under @njit, the default when numba imports cleanly) and
``numpy_backend`` (vectorized fallback). The environment variable
``D2C_BACKEND`` forces one of {"numba", "numpy"}. Within one backend
results are deterministic down to the bit; across backends they agree
to floating-point tolerance only, since the accumulation orders differ.
"""

from __future__ import annotations

import os
import warnings
from types import ModuleType

from . import numpy_backend

ENV_BACKEND = "D2C_BACKEND"

try:
    from . import numba_backend

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    numba_backend = None  # type: ignore[assignment]
    HAS_NUMBA = False

BACKENDS = ("numba", "numpy") if HAS_NUMBA else ("numpy",)


def default_backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"


def get_backend(name: str | None = None) -> ModuleType:
    """Resolve a kernel backend by name, env var, or default.

    Precedence: explicit ``name``, then ``D2C_BACKEND``, then numba if
    available. Asking for numba when it failed to import falls back to
    numpy with a warning rather than erroring.
    """
    if name is None:
        name = os.environ.get(ENV_BACKEND, "").strip().lower() or default_backend()
    name = name.lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}, choose from ('numba', 'numpy')")
    if name == "numba":
        if not HAS_NUMBA:
            warnings.warn("numba unavailable, using numpy kernels", RuntimeWarning)
            return numpy_backend
        return numba_backend
    return numpy_backend


__all__ = [
    "BACKENDS",
    "ENV_BACKEND",
    "HAS_NUMBA",
    "default_backend",
    "get_backend",
    "numpy_backend",
    "numba_backend",
]
