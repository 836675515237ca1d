from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # no Cython: install the pure-Python fallback only
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("nnreach._kernels", ["src/nnreach/_kernels.pyx"],
                   extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
