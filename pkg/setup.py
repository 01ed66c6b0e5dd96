"""Build the optional Cython kernels; the package still installs without them."""
import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("LDPSTREAM_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "ldpstream.kernels._ckernels",
        ["src/ldpstream/kernels/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=_extensions())
