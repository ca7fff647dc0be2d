import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "headplan.tinynet._convkern",
                ["src/headplan/tinynet/_convkern.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython available: install pure-Python only, the runtime falls back.
    ext_modules = []

setup(ext_modules=ext_modules)
