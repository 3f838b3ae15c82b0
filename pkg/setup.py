"""Build hook for the optional compiled coding kernels.

The package is pure Python plus one optional Cython extension
(``bcgbeat.kernels._fastpath``).  If Cython or a C compiler is missing the
build falls back to the NumPy reference kernels, which implement identical
math; nothing in the package requires the extension.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible, otherwise continue without it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            "warning: building the compiled coding kernels failed (%s); "
            "falling back to the NumPy reference implementation" % (exc,),
            file=sys.stderr,
        )


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError as exc:
        print(
            "warning: %s; compiled coding kernels will not be built" % (exc,),
            file=sys.stderr,
        )
        return []
    ext = Extension(
        "bcgbeat.kernels._fastpath",
        sources=["src/bcgbeat/kernels/_fastpath.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(
    ext_modules=_extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
