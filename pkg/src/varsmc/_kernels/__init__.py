"""Kernel backend selection.

The compiled extension (``varsmc._kernels._core``) is used when it imported
successfully; otherwise the numpy reference implementation takes over.
``VARSMC_BACKEND=python`` forces the fallback, ``VARSMC_BACKEND=c`` demands
the extension (raising if it is unavailable). Both expose the same functions:
``batch_loss`` and ``batch_step``.
"""

import os

from . import _ref

_requested = os.environ.get("VARSMC_BACKEND", "").strip().lower()

if _requested == "python":
    _impl = _ref
elif _requested == "c":
    from . import _core as _impl  # noqa: F401  (ImportError is the contract here)
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _ref

BACKEND = _impl.BACKEND
batch_loss = _impl.batch_loss
batch_step = _impl.batch_step
