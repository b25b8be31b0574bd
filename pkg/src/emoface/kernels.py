"""Kernel backend selection.

The compiled extension is used when it imports; set ``EMOFACE_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

from . import _kernels_py

python_backend = _kernels_py
compiled_backend = None

if os.environ.get("EMOFACE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_backend  # type: ignore[no-redef]
    except ImportError:
        compiled_backend = None

backend = compiled_backend or python_backend
BACKEND = "cython" if compiled_backend is not None and backend is compiled_backend else "python"

spiral_gather = backend.spiral_gather
spiral_scatter = backend.spiral_scatter
