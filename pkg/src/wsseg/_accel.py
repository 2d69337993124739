"""Backend selection for the hot kernels.

The compiled extension is preferred; set ``WSSEG_PURE=1`` to force the
pure-Python fallback (useful for checking that both agree).
"""

import os

BACKEND = "python"

if not os.environ.get("WSSEG_PURE"):
    try:
        from ._kernels import query_knn
    except ImportError:
        from ._fallback import query_knn
    else:
        BACKEND = "cython"
else:
    from ._fallback import query_knn

__all__ = ["BACKEND", "query_knn"]
