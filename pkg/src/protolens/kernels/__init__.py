"""Backend selection for the training hot path.

Two interchangeable implementations of ``batch_loss_and_grads`` exist: a
compiled Cython kernel and the numpy reference. The compiled one is used
when importable; set PROTOLENS_BACKEND=numpy or =cython to force a choice
(forcing cython without the built extension is an error).
"""

from __future__ import annotations

import os

from ..errors import ConfigError

_BACKEND = None
_BACKEND_NAME = None


def _resolve():
    global _BACKEND, _BACKEND_NAME
    if _BACKEND is not None:
        return _BACKEND
    from . import numpy_backend

    choice = os.environ.get("PROTOLENS_BACKEND", "").strip().lower()
    if choice not in ("", "numpy", "cython"):
        raise ConfigError(
            f"PROTOLENS_BACKEND must be 'numpy' or 'cython', got {choice!r}"
        )
    if choice == "numpy":
        _BACKEND, _BACKEND_NAME = numpy_backend, "numpy"
        return _BACKEND
    try:
        from . import cython_backend
    except ImportError:
        if choice == "cython":
            raise ConfigError(
                "PROTOLENS_BACKEND=cython but the compiled extension is not available"
            ) from None
        _BACKEND, _BACKEND_NAME = numpy_backend, "numpy"
        return _BACKEND
    _BACKEND, _BACKEND_NAME = cython_backend, "cython"
    return _BACKEND


def get_backend():
    return _resolve()


def backend_name() -> str:
    _resolve()
    return _BACKEND_NAME
