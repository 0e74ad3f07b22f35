"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``GATELAB_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("GATELAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND


def logsumexp_rows(theta):
    return _impl.logsumexp_rows(np.ascontiguousarray(theta, dtype=np.float64))


def gather_logprobs(theta, lse, ctx, tok):
    return _impl.gather_logprobs(
        np.ascontiguousarray(theta, dtype=np.float64),
        np.ascontiguousarray(lse, dtype=np.float64),
        np.ascontiguousarray(ctx, dtype=np.int64),
        np.ascontiguousarray(tok, dtype=np.int64),
    )


def accumulate_grad(theta, lse, ctx, tok, weights, grad):
    if grad.dtype != np.float64 or not grad.flags.c_contiguous:
        raise TypeError("grad must be a C-contiguous float64 array")
    _impl.accumulate_grad(
        np.ascontiguousarray(theta, dtype=np.float64),
        np.ascontiguousarray(lse, dtype=np.float64),
        np.ascontiguousarray(ctx, dtype=np.int64),
        np.ascontiguousarray(tok, dtype=np.int64),
        np.ascontiguousarray(weights, dtype=np.float64),
        grad,
    )
