import numpy as np
from setuptools import Extension, setup

# The compiled kernel core is optional: if Cython (or a C toolchain) is
# unavailable the package falls back to the numpy kernels at import time.
try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "varnet4d._fastkernels",
                ["src/varnet4d/_fastkernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
