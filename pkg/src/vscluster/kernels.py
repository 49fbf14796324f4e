"""Hot kernels, compiled when available.

Set ``VSCLUSTER_PURE_PYTHON=1`` to force the pure-Python implementations.
"""

import os

from . import _fallback

BACKEND = "python"

if os.environ.get("VSCLUSTER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

sha256_iterate = _impl.sha256_iterate
sha256_chain = _impl.sha256_chain
snr_matrix = _impl.snr_matrix

__all__ = ["BACKEND", "sha256_iterate", "sha256_chain", "snr_matrix"]
