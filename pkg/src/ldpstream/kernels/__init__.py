"""Hot-loop kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built and ``LDPSTREAM_PURE_PYTHON``
is unset. ``BACKEND`` names the active one. The wrappers here normalize dtypes
and memory layout so both backends see the same arrays.
"""
import os

import numpy as np

from . import _pykernels as python_backend

compiled_backend = None
if not os.environ.get("LDPSTREAM_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"


def _backend(name):
    if name is None:
        return _active
    if name == "python":
        return python_backend
    if name == "cython":
        if compiled_backend is None:
            raise RuntimeError("compiled kernels are not available")
        return compiled_backend
    raise ValueError(f"unknown backend {name!r}")


def krr_perturb(values, uniforms, p, q, d, backend=None):
    """kRR reports from one uniform per user: keep if u < p, else map u to another item."""
    values = np.ascontiguousarray(values, dtype=np.int64)
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    return _backend(backend).krr_perturb(values, uniforms, float(p), float(q), int(d))


def oue_perturb(values, uniforms, p, q, backend=None):
    """OUE bit vectors from an (n, d) block of uniforms."""
    values = np.ascontiguousarray(values, dtype=np.int64)
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    return _backend(backend).oue_perturb(values, uniforms, float(p), float(q))


def iforest_path_lengths(X, samples, uniforms, height_limit, backend=None):
    """Average isolation path length of each row of X over all trees."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    samples = np.ascontiguousarray(samples, dtype=np.int64)
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    return _backend(backend).iforest_path_lengths(X, samples, uniforms, int(height_limit))


average_path_length = python_backend._avg_path
