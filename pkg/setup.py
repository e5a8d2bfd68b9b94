import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The compiled kernel is optional: the package falls back to the numpy lane
# when the extension is unavailable (RSHE_KERNEL=python also forces that).
ext_modules = []
if cythonize is not None and not os.environ.get("RSHE_SKIP_EXT"):
    ext = Extension(
        "rshe.kernels._core",
        ["src/rshe/kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        # -ffp-contract=off keeps the scalar float ops in the kernel
        # bit-compatible with numpy's (no FMA fusing of a*b+c).
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
