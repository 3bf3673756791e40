import os

import numpy as np
from setuptools import Extension, setup


def _compile_args():
    args = ["-O3"]
    # the share generator vectorizes well; opt out for portable wheels
    if not os.environ.get("SECUREABM_PORTABLE"):
        args.append("-march=native")
    return args


try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; kernels fall back to numpy
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "secureabm._core",
                ["src/secureabm/_core.pyx"],
                include_dirs=[np.get_include(), "src/secureabm"],
                extra_compile_args=_compile_args(),
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
