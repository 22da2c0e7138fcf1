"""Solver kernel backends.

Two interchangeable implementations of the hot kernels exist: a compiled
Cython module (``_kernels``) and a pure-numpy reference (``reference``).
Selection happens once at import time:

* ``NORMSEG_BACKEND=python`` forces the reference implementation,
* ``NORMSEG_BACKEND=cython`` requires the compiled module (ImportError if
  it is missing),
* ``NORMSEG_BACKEND=auto`` (or unset) prefers the compiled module and falls
  back to the reference one.

Both backends expose the same five functions with identical semantics; the
parity tests hold them to that.
"""

import os

from . import reference

_choice = os.environ.get("NORMSEG_BACKEND", "auto").lower()
if _choice not in ("auto", "cython", "python"):
    raise ImportError(f"NORMSEG_BACKEND must be auto, cython or python, got {_choice!r}")

if _choice == "python":
    _impl = reference
    BACKEND_NAME = "python"
elif _choice == "cython":
    from . import _kernels as _impl

    BACKEND_NAME = "cython"
else:
    try:
        from . import _kernels as _impl

        BACKEND_NAME = "cython"
    except ImportError:
        _impl = reference
        BACKEND_NAME = "python"

cp_solve = _impl.cp_solve
karcher_batch = _impl.karcher_batch
y_step = _impl.y_step
phi_step = _impl.phi_step
m_step = _impl.m_step


def get_backend():
    """Return (name, module) for the active kernel implementation."""
    return BACKEND_NAME, _impl
