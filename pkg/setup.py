import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The sampling kernels are an optional accelerator.  Without Cython (or a C
# compiler) the package still installs and falls back to the pure numpy
# implementation in voprlab._sampling_py.
ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "voprlab._sampling",
                ["src/voprlab/_sampling.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
