import os

from setuptools import setup

ext_modules = []
if os.environ.get("NCF_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext = Extension(
            "ncfield._kernels",
            ["src/ncfield/_kernels.pyx"],
            include_dirs=[np.get_include()],
            # keep a*b+c unfused so both backends round identically
            extra_compile_args=["-O2", "-ffp-contract=off"],
            optional=True,
        )
        ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
