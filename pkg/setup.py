"""Build script for the optional compiled kernel core.

The package is fully functional without the extension: trajsynth.nn.kernels
falls back to the numpy reference implementation at import time. A failed
compile therefore downgrades the install instead of breaking it.
"""

import warnings

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, otherwise install pure-Python."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            warnings.warn(f"compiled kernels skipped ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"compiled kernels skipped ({exc}); using numpy fallback")


def make_extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        warnings.warn("Cython not available; installing without compiled kernels")
        return []
    extensions = [
        Extension(
            "trajsynth.nn.kernels._fastcore",
            ["src/trajsynth/nn/kernels/_fastcore.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    return cythonize(extensions, compiler_directives={"language_level": 3})


setup(ext_modules=make_extensions(), cmdclass={"build_ext": OptionalBuildExt})
