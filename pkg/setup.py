"""Build the optional compiled kernel extension.

If Cython or a C compiler is missing, the package still installs and the
pure-Python fallback in ``smartmixed._fallback`` is used at import time.
Set ``SMARTMIXED_PORTABLE=1`` to build without ``-march=native``.
"""

import os

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    # no FMA contraction and no value-changing math flags: results must match
    # the numpy fallback bit for bit.  -fno-math-errno only lets sqrt vectorize.
    compile_args = ["-O3", "-ffp-contract=off", "-fno-fast-math", "-fno-math-errno"]
    if not os.environ.get("SMARTMIXED_PORTABLE"):
        compile_args.append("-march=native")
    ext_modules = cythonize(
        [
            Extension(
                "smartmixed._kernels",
                ["src/smartmixed/_kernels.pyx"],
                include_dirs=["src/smartmixed", np.get_include()],
                extra_compile_args=compile_args,
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
