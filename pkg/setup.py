import numpy
from setuptools import Extension, setup

# The compiled kernels are an optional fast path: if Cython is unavailable the
# package installs pure-Python and selects the NumPy fallback at import time.
try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "modelspace.kernels._core",
                ["src/modelspace/kernels/_core.pyx"],
                extra_compile_args=["-O3"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
