"""Build script.

The lattice forward/backward kernels have a compiled Cython core; if
Cython or a C compiler is unavailable the package still installs and falls
back to the pure-numpy kernels at import time.

    pip install -e . --no-build-isolation
"""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [Extension("fnt.lattice._kernels", ["src/fnt/lattice/_kernels.pyx"])],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
