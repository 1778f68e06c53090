"""Kernel selection: compiled extension when available, pure Python otherwise.

Set ``CHEEPSYNC_PURE=1`` to force the pure-Python kernel (used by the parity
tests and the benchmark).  Both kernels are bit-identical; the compiled one
is just much faster on study-scale simulations.
"""

import os

from cheepsync import _kernel_py

if os.environ.get("CHEEPSYNC_PURE"):
    _impl = _kernel_py
else:
    try:
        from cheepsync import _kernel as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernel_py

KERNEL = "compiled" if _impl.COMPILED else "pure-python"

crc24_register = _impl.crc24_register
run_receiver_loop = _impl.run_receiver_loop

CRC24_POLY = _kernel_py.CRC24_POLY
CRC24_INIT = _kernel_py.CRC24_INIT
CRC24_TABLE = _kernel_py.CRC24_TABLE
REV8 = _kernel_py.REV8


def kernels():
    """All importable kernel implementations, for parity tests/benchmarks."""
    out = {"pure-python": _kernel_py}
    try:
        from cheepsync import _kernel

        out["compiled"] = _kernel
    except ImportError:
        pass
    return out
