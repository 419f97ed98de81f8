"""Backend selection for the hot expectation kernels.

Two interchangeable implementations live here: a jit-compiled one (_numba)
and a vectorized pure-numpy one (_numpy).  Selection happens once at import:

  CGPDS_BACKEND=numpy   force the numpy path
  CGPDS_BACKEND=numba   require the jit path (ImportError if unavailable)
  unset / auto          jit when numba imports, numpy otherwise

Setting NUMBA_DISABLE_JIT also routes to the numpy path; running the loopy
kernels through the interpreter helps nobody.  ``BACKEND`` names the active
choice.  benchmarks/bench_backends.py compares the two.
"""

import os

_choice = os.environ.get("CGPDS_BACKEND", "auto").strip().lower() or "auto"
if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(f"CGPDS_BACKEND must be 'numba' or 'numpy', got {_choice!r}")

if _choice == "numba":
    from . import _numba as _impl
    BACKEND = "numba"
else:
    try:
        if _choice == "numpy" or os.environ.get("NUMBA_DISABLE_JIT"):
            raise ImportError
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:
        from . import _numpy as _impl
        BACKEND = "numpy"

psi1_fwd = _impl.psi1_fwd
psi1_bwd = _impl.psi1_bwd
omega_fwd = _impl.omega_fwd
omega_bwd = _impl.omega_bwd
omega_point = _impl.omega_point

__all__ = ["BACKEND", "psi1_fwd", "psi1_bwd", "omega_fwd", "omega_bwd", "omega_point"]
