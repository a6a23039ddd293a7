"""Backend selection for the hot likelihood kernel.

The compiled extension is used when it was built; otherwise the numpy version.
Set ``PERFCOMPLETE_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
loglik_terms = _kernels_py.loglik_terms

if os.environ.get("PERFCOMPLETE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        loglik_terms = _kernels.loglik_terms

__all__ = ["BACKEND", "loglik_terms"]
