"""Build script for the optional compiled kernel.

The package works without the extension (a vectorized numpy fallback is
selected at import time); the Cython core exists because the closed-loop
right-hand side is evaluated tens of thousands of times per simulation.
"""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "stlagc._kernels._fastcore",
        ["src/stlagc/_kernels/_fastcore.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    ),
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    ),
)
