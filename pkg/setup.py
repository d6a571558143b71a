"""Build script: compiles the optional fast-kernel extension when Cython is available.

Set DIFFBC_NO_EXT=1 to force a pure-Python install; the package selects the
numpy fallback automatically when the extension is missing.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("DIFFBC_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "diffbc._kernels._fast",
                    ["src/diffbc/_kernels/_fast.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3", "-fopenmp"],
                    extra_link_args=["-fopenmp"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
