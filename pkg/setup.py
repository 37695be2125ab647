"""Build the optional compiled kernels.

The package works without the extension (a pure-Python fallback is
selected at import time), so a failed compile only costs speed.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "speechbench._kernels",
                ["src/speechbench/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )
    for ext in ext_modules:
        ext.optional = True
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
