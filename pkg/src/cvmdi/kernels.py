"""Backend selection for the post-selection hot loop.

The compiled extension ``cvmdi._kernels`` is used when it was built;
otherwise the numpy implementation in ``cvmdi._kernels_py`` is used.
Both return identical results to ~1e-12.
"""

from __future__ import annotations

from . import _kernels_py
from ._kernels_py import GramError, posteriors, sign_table

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

_active = "cython" if _compiled is not None else "python"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def backend() -> str:
    return _active


def use_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    _active = name


def single_point_terms(q, gamma, coef, lam, overlap_form, *, backend: str | None = None):
    """Dispatch to the active backend; see ``_kernels_py.single_point_terms``."""
    mod = _BACKENDS[backend or _active]
    return mod.single_point_terms(q, gamma, coef, float(lam), overlap_form)


__all__ = [
    "GramError",
    "available_backends",
    "backend",
    "posteriors",
    "sign_table",
    "single_point_terms",
    "use_backend",
]
