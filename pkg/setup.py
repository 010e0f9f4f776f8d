import os
import sys

from setuptools import Extension, setup


def ext_modules():
    if os.environ.get("RESSET_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "resset._lstm_ext",
        ["src/resset/_lstm_ext.pyx"],
        include_dirs=[np.get_include()],
        # fast-math lets gcc vectorize exp through glibc's libmvec; compile-only,
        # so the process-wide FTZ/DAZ startup code is never linked in
        extra_compile_args=["-O3", "-ffast-math"] if sys.platform.startswith("linux") else ["-O3"],
        libraries=["mvec"] if sys.platform.startswith("linux") else [],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=ext_modules())
