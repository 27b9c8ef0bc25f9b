"""Select the kernel implementation at import time.

The compiled extension is used when importable; ``BAGM_PURE_PYTHON=1`` forces
the numpy fallback.
"""

import os

if os.environ.get("BAGM_PURE_PYTHON"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        from . import _kernels_py as kernels

BACKEND = kernels.BACKEND
