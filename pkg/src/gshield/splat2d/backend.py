"""Kernel backend selection.

The compiled Cython module is preferred; the numpy fallback implements the
same math and is used when the extension is unavailable or when
``GSHIELD_KERNELS=py`` forces it (handy for the benchmark and for
debugging).
"""

import os

from . import _kernels_py

_forced = os.environ.get("GSHIELD_KERNELS", "").strip().lower()

if _forced == "py":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels_cy as _impl

        BACKEND = "cython"
    except ImportError:
        if _forced == "cy":
            raise ImportError(
                "GSHIELD_KERNELS=cy but the compiled kernels are not built; "
                "run `pip install -e .` with a C compiler available"
            )
        _impl = _kernels_py
        BACKEND = "python"


def get_backend(name=None):
    """Kernel module by name ("cython"/"py"), or the selected default."""
    if name in (None, "", "default"):
        return _impl
    if name in ("py", "python", "numpy"):
        return _kernels_py
    if name in ("cy", "cython"):
        from . import _kernels_cy

        return _kernels_cy
    raise ValueError(f"unknown kernel backend {name!r}")


forward = _impl.forward
backward = _impl.backward
