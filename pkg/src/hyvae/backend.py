"""Numeric kernel backend selection.

Two interchangeable backends implement the element-level kernels used by
the autodiff tape:

* ``hyvae._kernels`` — Cython extension compiled at install time (fast
  path for the small arrays that dominate training).
* ``hyvae._kernels_py`` — pure NumPy fallback, always available.

The compiled backend is preferred when importable; set
``HYVAE_PURE_PYTHON=1`` to force the fallback.  Matrix products are *not*
part of this interface — they go straight to NumPy's BLAS in both modes,
which is already optimal at the sizes involved.

``K`` is the active backend module; swap it with :func:`use` (mainly for
benchmarks and cross-backend tests).

The two backends agree to floating-point rounding (a few ULPs), not
bit-for-bit: transcendentals come from libm in the compiled path and from
NumPy's vectorized implementations in the fallback.  Each backend is
individually deterministic, which is what reproducibility guarantees
(same seed ⇒ same bytes) are stated over.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

COMPILED_AVAILABLE = _compiled is not None

if COMPILED_AVAILABLE and os.environ.get("HYVAE_PURE_PYTHON") != "1":
    K = _compiled
else:
    K = _kernels_py


def active_name() -> str:
    return "compiled" if K.COMPILED else "python"


def get(name: str):
    """Return a backend module by name ('compiled' or 'python')."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def use(name: str) -> None:
    """Switch the active backend (affects all subsequent tensor ops)."""
    global K
    K = get(name)
