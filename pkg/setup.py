import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; wsseg._fallback is used at runtime
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("WSSEG_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "wsseg._kernels",
                ["src/wsseg/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # contraction would change the rounding of squared distances
                # and break exact agreement with the fallback
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
