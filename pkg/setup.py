"""Builds the optional compiled training kernel.

The package works without it: protolens.kernels falls back to the pure
numpy backend when the extension is missing.
"""

import os

import numpy
from setuptools import setup, Extension

PYX = "src/protolens/kernels/_core.pyx"

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = [] if not os.path.exists(PYX) else cythonize(
        [
            Extension(
                "protolens.kernels._core",
                sources=[PYX],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
