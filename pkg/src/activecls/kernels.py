"""Backend selection for the hot kernels.

The compiled extension ``_ckernels`` is preferred; the pure-Python module
``_pykernels`` is used when the extension is not built or when the
environment variable ``ACTIVECLS_BACKEND=python`` is set.
"""
import importlib
import os

from . import _pykernels


def load_backend(name=None):
    """Return the kernel module for ``name`` ('cython', 'python' or None for auto)."""
    if name is None:
        name = os.environ.get("ACTIVECLS_BACKEND", "auto").lower()
    if name == "python":
        return _pykernels
    try:
        return importlib.import_module("activecls._ckernels")
    except ImportError:
        if name == "cython":
            raise
        return _pykernels


def available_backends():
    names = ["python"]
    try:
        importlib.import_module("activecls._ckernels")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


backend = load_backend()
BACKEND = backend.BACKEND
