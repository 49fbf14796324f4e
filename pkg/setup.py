"""Builds the optional Cython kernel; the package falls back to pure Python without it."""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

extensions = [
    Extension(
        "vscluster._kernels",
        ["src/vscluster/_kernels.pyx"],
        libraries=["crypto"],
        # keep float results bit-identical with the pure-Python path
        extra_compile_args=["-O3", "-ffp-contract=off", "-Wno-deprecated-declarations"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"})
    if cythonize is not None
    else [],
)
