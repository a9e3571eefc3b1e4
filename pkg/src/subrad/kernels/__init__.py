"""Hot kernel for Monte-Carlo wavefunction stepping.

The compiled Cython extension is used when available; set ``SUBRAD_PURE=1``
to force the pure-numpy fallback (same semantics, slower).  The selected
implementation is reported in :data:`BACKEND`.
"""
import os

STATUS_REACHED = 0
STATUS_JUMP = 1

_force_pure = os.environ.get("SUBRAD_PURE", "").lower() in ("1", "true", "yes")

if _force_pure:
    from ._pure import advance_nonhermitian
    BACKEND = "pure"
else:
    try:
        from ._core import advance_nonhermitian
        BACKEND = "compiled"
    except ImportError:
        from ._pure import advance_nonhermitian
        BACKEND = "pure"

__all__ = ["advance_nonhermitian", "BACKEND", "STATUS_REACHED", "STATUS_JUMP"]
