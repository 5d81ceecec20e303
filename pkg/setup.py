import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; branchkit falls back to numpy kernels
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("BRANCHKIT_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "branchkit._kernels",
                ["src/branchkit/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no -ffast-math / FMA: results must match the numpy fallback bit for bit
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
