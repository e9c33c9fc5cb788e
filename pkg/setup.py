"""Build script for the optional compiled kernel backend.

The package is pure Python plus one Cython extension
(stereoadapt.kernels._native).  If Cython or a C compiler is missing the
extension is skipped and the numpy fallback backend is used at runtime.
"""

import sys

from setuptools import Extension, setup

try:
    import numpy as np
except ImportError:  # pragma: no cover - numpy is a hard dependency anyway
    np = None

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

ext_modules = []
if np is not None and cythonize is not None:
    try:
        ext_modules = cythonize(
            [
                Extension(
                    "stereoadapt.kernels._native",
                    ["src/stereoadapt/kernels/_native.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-funroll-loops"],
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
    except Exception as exc:  # pragma: no cover
        print("stereoadapt: skipping compiled backend (%s)" % exc, file=sys.stderr)
        ext_modules = []

setup(ext_modules=ext_modules)
