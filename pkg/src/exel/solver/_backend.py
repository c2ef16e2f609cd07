"""Select the compiled BCD kernel when available.

Set ``EXEL_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _bcd_py

python_kernel = _bcd_py
compiled_kernel = None

if os.environ.get("EXEL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _bcd_core as compiled_kernel
    except ImportError:  # extension not built
        compiled_kernel = None

kernel = compiled_kernel if compiled_kernel is not None else python_kernel
BACKEND = "cython" if kernel is compiled_kernel else "python"
