import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "crosstouch.kernels._convkern",
                ["src/crosstouch/kernels/_convkern.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # pure-python fallback is selected at import time, so the package
    # still works without the compiled kernels
    extensions = []

setup(ext_modules=extensions)
