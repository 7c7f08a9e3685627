"""Build script: compiles the optional fast-kernel extension when Cython is present.

The package works without the extension (a pure numpy lane is selected at
import time); building it just makes the hot loops faster.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [Extension("scenefuse._kernels", ["src/scenefuse/_kernels.pyx"])],
        compiler_directives={"language_level": "3"},
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules)
