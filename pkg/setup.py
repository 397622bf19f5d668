"""Build script for the optional compiled kernels.

If Cython or a C compiler is unavailable the package still installs and
``dpselect.kernels`` falls back to the pure-Python implementation.
"""

import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("DP_SELECT_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    random_lib = os.path.join(np.get_include(), "..", "..", "random", "lib")
    ext = Extension(
        "dpselect._kernels",
        ["src/dpselect/_kernels.pyx"],
        include_dirs=[np.get_include()],
        library_dirs=[random_lib],
        libraries=["npyrandom"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        optional=True,
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=_extensions())
