"""Hot kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``ASMLP_NUMBA=0`` to force the
numpy path; it is also used automatically when numba cannot be imported. Both
backends stay importable through :func:`get_backend` for cross-checks and the
benchmark.
"""
import logging
import os

from . import _numpy as numpy_backend
from ._common import MODE_CODES, group_offsets, source_index

logger = logging.getLogger(__name__)

_FALSEY = {"0", "false", "no", "off"}


def _load_numba():
    try:
        from . import _numba
    except ImportError as exc:  # pragma: no cover - depends on environment
        logger.warning("numba unavailable, using numpy kernels: %s", exc)
        return None
    return _numba


numba_backend = _load_numba()
USE_NUMBA = numba_backend is not None and os.environ.get("ASMLP_NUMBA", "1").lower() not in _FALSEY
BACKEND = "numba" if USE_NUMBA else "numpy"

_active = numba_backend if USE_NUMBA else numpy_backend


def get_backend(name=None):
    """Return the kernel module for ``name`` ("numba" or "numpy"; default: active)."""
    if name is None:
        return _active
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        if numba_backend is None:
            raise RuntimeError("numba backend requested but numba is not importable")
        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    return ["numpy"] + (["numba"] if numba_backend is not None else [])


layer_norm_fwd = _active.layer_norm_fwd
layer_norm_bwd = _active.layer_norm_bwd
gelu_fwd = _active.gelu_fwd
gelu_bwd = _active.gelu_bwd
shift_fwd = _active.shift_fwd
shift_bwd = _active.shift_bwd
crc64 = _active.crc64

__all__ = [
    "BACKEND",
    "MODE_CODES",
    "USE_NUMBA",
    "available_backends",
    "crc64",
    "gelu_bwd",
    "gelu_fwd",
    "get_backend",
    "group_offsets",
    "layer_norm_bwd",
    "layer_norm_fwd",
    "shift_bwd",
    "shift_fwd",
    "source_index",
]
