"""Build the optional Cython LSTM kernel; the package works without it."""

import numpy as np
from setuptools import setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing etc.
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback")


ext_modules = []
if cythonize is not None:
    try:
        ext_modules = cythonize(
            ["src/driftbench/_kernels/_lstm_ext.pyx"],
            compiler_directives={"language_level": "3"},
        )
    except Exception as exc:
        print(f"warning: cythonize failed ({exc}); using numpy fallback")
    for ext in ext_modules:
        ext.include_dirs.append(np.get_include())
        ext.extra_compile_args.append("-O3")
        ext.define_macros.append(("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION"))

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
