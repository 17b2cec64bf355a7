import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "specmer.kernels._conv_kernels",
                ["src/specmer/kernels/_conv_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # Pure-python fallback backend is selected at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
