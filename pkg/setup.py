from setuptools import setup, Extension

import numpy as np
from Cython.Build import cythonize

ext_modules = [
    Extension(
        "plainseg.kernels._ckernels",
        ["src/plainseg/kernels/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(ext_modules, language_level=3))
