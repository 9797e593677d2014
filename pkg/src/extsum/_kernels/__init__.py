"""Hot-kernel backend selection.

The compiled Cython extension is preferred when present; setting
``EXTSUM_PURE_PYTHON=1`` (or any non-zero value) forces the NumPy fallback.
``BACKEND`` names the active implementation so callers and benchmarks can
report it.
"""

import os

from . import pybackend

_force_pure = os.environ.get("EXTSUM_PURE_PYTHON", "").strip() not in ("", "0")

if not _force_pure:
    try:
        from . import _core as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = pybackend
        BACKEND = "pure-python"
else:
    _impl = pybackend
    BACKEND = "pure-python"

attention_tiled = _impl.attention_tiled
lcs_length_ids = _impl.lcs_length_ids
