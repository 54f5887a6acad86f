"""Builds the optional compiled falsifier; the package works without it."""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("BBLYAP_NO_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension(
                "bblyap._falsify",
                sources=["src/bblyap/_falsify.pyx"],
                # keep a*b+c as two roundings so results match the Python kernel
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
