import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# optional=True: if the toolchain cannot build the extension the install
# still succeeds and the package falls back to the numpy kernels.
ext = Extension(
    "varsmc._kernels._core",
    ["src/varsmc/_kernels/_core.pyx", "src/varsmc/_kernels/_recursion.c"],
    include_dirs=[np.get_include(), "src/varsmc/_kernels"],
    extra_compile_args=["-O3", "-fno-math-errno", "-fopenmp-simd", "-march=native"],
    libraries=["m"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    optional=True,
)

setup(ext_modules=cythonize([ext], language_level="3"))
