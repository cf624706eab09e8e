"""Build the optional Cython kernels.

The package works without them: ``hustab.numerics`` falls back to the
numpy implementation when the extension cannot be imported.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("HUSTAB_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "hustab.numerics._kernels",
                    ["src/hustab/numerics/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except Exception as exc:  # pragma: no cover - build environment dependent
        print(f"hustab: building without compiled kernels ({exc})", file=sys.stderr)
        ext_modules = []

setup(ext_modules=ext_modules)
