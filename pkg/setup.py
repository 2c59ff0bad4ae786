import os

from setuptools import Extension, setup

# RPCLAY_NO_EXT=1 skips the compiled kernel; the pure-Python integrator is
# picked up at import time instead.
ext_modules = []
if not os.environ.get("RPCLAY_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "rpclay._kernel",
                ["src/rpclay/_kernel.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
