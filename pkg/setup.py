"""Build script: compiles the optional Cython kernel core.

The package works without the extension (NumPy fallback is selected at
import time); set ECVIT_SKIP_EXT=1 to skip compilation entirely.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("ECVIT_SKIP_EXT", "0") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "ecvit._kernels._cykernels",
                    ["src/ecvit/_kernels/_cykernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
