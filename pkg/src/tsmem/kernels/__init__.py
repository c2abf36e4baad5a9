"""Backend dispatch for the hot memory-recurrence kernels.

Two interchangeable implementations exist: numba-jitted loops (fast, the
default when numba imports cleanly) and vectorized pure numpy (always
available). Set ``TSMEM_NUMBA=0`` to force the numpy path. Both expose the
same four functions; ``tsmem bench --compare-backends`` times them against
each other.
"""

from __future__ import annotations

import os


def _want_numba() -> bool:
    flag = os.environ.get("TSMEM_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


BACKEND = "numpy"
if _want_numba():
    try:
        from .titans_nb import titans_bwd, titans_fwd
        from .cms_nb import cms_bwd, cms_fwd

        BACKEND = "numba"
    except ImportError:
        from .titans_np import titans_bwd, titans_fwd
        from .cms_np import cms_bwd, cms_fwd
else:
    from .titans_np import titans_bwd, titans_fwd
    from .cms_np import cms_bwd, cms_fwd

__all__ = ["BACKEND", "titans_fwd", "titans_bwd", "cms_fwd", "cms_bwd"]
