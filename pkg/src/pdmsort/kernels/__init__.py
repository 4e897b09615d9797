"""Kernel selection: compiled extension when available, numpy fallback otherwise."""

from __future__ import annotations

import os

from . import py as py_kernels

try:
    from pdmsort import _ckernels as c_kernels
except ImportError:  # built without the extension
    c_kernels = None

NEED_BATCH = py_kernels.NEED_BATCH
OUT_FULL = py_kernels.OUT_FULL
SAMPLE_FULL = py_kernels.SAMPLE_FULL
DRAINED = py_kernels.DRAINED
SRC_EMPTY = py_kernels.SRC_EMPTY
DONE = py_kernels.DONE

KernelScheduleError = py_kernels.KernelScheduleError


def get_kernels(which: str = "auto"):
    """Return the kernel module for ``which`` in {auto, compiled, python}."""
    if which in (None, "auto"):
        which = os.environ.get("PDMSORT_KERNELS", "auto")
    if which == "auto":
        return c_kernels if c_kernels is not None else py_kernels
    if which in ("c", "compiled"):
        if c_kernels is None:
            raise RuntimeError("compiled kernels requested but the extension is not built")
        return c_kernels
    if which in ("py", "python"):
        return py_kernels
    raise ValueError(f"unknown kernel implementation {which!r}")


def available() -> list[str]:
    return ["compiled", "python"] if c_kernels is not None else ["python"]
