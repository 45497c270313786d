"""Build script for the compiled kernel extension.

The package works without the extension (a pure-numpy fallback is selected at
import time), so a missing Cython/compiler only costs speed, not features.
"""

from setuptools import setup
from setuptools.extension import Extension

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "mgrdenoise._kernels",
                sources=["src/mgrdenoise/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
