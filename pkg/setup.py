import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "deepsetq.sim._kernels",
        ["src/deepsetq/sim/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O2"],
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
