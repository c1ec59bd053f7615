import os

from setuptools import Extension, setup

def _compile_args():
    args = ["-O3"]
    # Host-targeted codegen so the kernel loops vectorize at full width;
    # set HTHC_NO_NATIVE=1 for a generic (portable binary) build.
    if not os.environ.get("HTHC_NO_NATIVE"):
        args.append("-march=native")
    return args


extensions = []
if not os.environ.get("HTHC_SKIP_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize

        extensions = cythonize(
            [
                Extension(
                    "hthc.kernels._cy",
                    ["src/hthc/kernels/_cy.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=_compile_args(),
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level="3",
        )
    except ImportError:
        # No Cython toolchain: install the pure numpy backend only.
        extensions = []

setup(ext_modules=extensions)
