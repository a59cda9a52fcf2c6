"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``SELPRED_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if not os.environ.get("SELPRED_PURE_PYTHON"):
    try:
        from . import _kernels_c as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def get_backend(name=None):
    """Return the kernel module for ``name`` ('cython', 'python' or the active one)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels_c

        return _kernels_c
    raise ValueError(f"unknown kernel backend {name!r}")


def triplet_loss_grad(z, zp, margin, want_grad=True):
    z = np.ascontiguousarray(z, dtype=np.float64)
    zp = np.ascontiguousarray(zp, dtype=np.float64)
    return _impl.triplet_loss_grad(z, zp, float(margin), want_grad)


def confusion_matrix(labels, preds, mask, n_classes):
    return _impl.confusion_matrix(
        np.ascontiguousarray(labels, dtype=np.int64),
        np.ascontiguousarray(preds, dtype=np.int64),
        np.ascontiguousarray(mask, dtype=bool),
        int(n_classes),
    )


def sweep_confusion(pmax, labels, preds, grid, n_classes):
    return _impl.sweep_confusion(
        np.ascontiguousarray(pmax, dtype=np.float64),
        np.ascontiguousarray(labels, dtype=np.int64),
        np.ascontiguousarray(preds, dtype=np.int64),
        np.ascontiguousarray(grid, dtype=np.float64),
        int(n_classes),
    )
