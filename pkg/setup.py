import os

import numpy as np
from setuptools import Extension, setup

# BAGM_NO_EXT=1 builds a pure-Python install; the package then runs on the numpy fallback.
ext_modules = []
if not os.environ.get("BAGM_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "bagm._kernels",
                ["src/bagm/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
