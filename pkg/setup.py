"""Build script for the optional compiled kernel.

The package works without the extension (a pure-Python kernel is selected
at import time); building it makes study-scale simulations orders of
magnitude faster.  -ffp-contract=off keeps the compiled float arithmetic
bit-identical to the pure-Python path.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.path.exists("src/cheepsync/_kernel.pyx"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "cheepsync._kernel",
                    ["src/cheepsync/_kernel.pyx"],
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
