"""Build script.

The numeric hot loops live in an optional Cython extension
(``hyvae._kernels``).  The package works without it: if Cython or a C
compiler is unavailable, or HYVAE_PURE_PYTHON=1 is set, the extension is
skipped and the NumPy fallback backend is used at import time.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible, otherwise install pure-Python."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, broken toolchain, ...
            print(f"warning: skipping compiled kernels ({exc}); "
                  "falling back to the NumPy backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not compile {ext.name} ({exc}); "
                  "falling back to the NumPy backend")


ext_modules = []
if os.environ.get("HYVAE_PURE_PYTHON") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension(
                "hyvae._kernels",
                sources=["src/hyvae/_kernels.pyx"],
                extra_compile_args=["-O3"],
            )],
            language_level="3",
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
