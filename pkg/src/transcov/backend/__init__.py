"""Kernel backend selection.

Hot inner loops (graphical-lasso coordinate descent, alternating
conditional-expectation sweeps, per-row EM conditioning, pairwise-complete
correlation) exist twice: a numba @njit build and a pure-numpy fallback with
identical signatures and semantics.  The TRANSCOV_BACKEND environment
variable picks one:

    TRANSCOV_BACKEND=numba   force numba (ImportError if unavailable)
    TRANSCOV_BACKEND=numpy   force the pure-numpy fallback
    unset / "auto"           numba if importable, else numpy
"""

import os

_choice = os.environ.get("TRANSCOV_BACKEND", "auto").lower()

if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"TRANSCOV_BACKEND must be 'auto', 'numba' or 'numpy', got {_choice!r}"
    )

if _choice == "numpy":
    HAVE_NUMBA = False
else:
    try:
        import numba  # noqa: F401
        HAVE_NUMBA = True
    except ImportError:
        if _choice == "numba":
            raise
        HAVE_NUMBA = False

if HAVE_NUMBA:
    from . import _numba as kernels
    BACKEND = "numba"
else:
    from . import _numpy as kernels
    BACKEND = "numpy"

glasso_core = kernels.glasso_core
ace_sweeps = kernels.ace_sweeps
rows_conditional_fill = kernels.rows_conditional_fill
pairwise_complete_corr = kernels.pairwise_complete_corr

__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "glasso_core",
    "ace_sweeps",
    "rows_conditional_fill",
    "pairwise_complete_corr",
]
