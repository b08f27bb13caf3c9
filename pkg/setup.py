import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; ltw2 falls back to ltw2._core_py
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("LTW2_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "ltw2._core",
                ["src/ltw2/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
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
