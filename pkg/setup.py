"""Build script for the optional compiled kernel core.

The package works without the extension (a pure-numpy kernel backend is
selected at import time), so a missing compiler or Cython only costs speed.
"""

import os

from setuptools import Extension, setup

PYX = "src/mgrl/autodiff/_speedups.pyx"

ext_modules = []
try:
    if not os.path.exists(PYX):
        raise ImportError
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "mgrl.autodiff._speedups",
                [PYX],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
