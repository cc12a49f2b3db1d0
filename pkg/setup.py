import os
from pathlib import Path

import numpy as np
from setuptools import Extension, setup

ext_kwargs = {}
if os.environ.get("HNN_MCMC_NO_EXTENSION") != "1":
    from Cython.Build import cythonize

    random_lib = Path(np.get_include()).parent.parent / "random" / "lib"
    ext = Extension(
        "hnn_mcmc._core",
        ["src/hnn_mcmc/_core.pyx"],
        include_dirs=[np.get_include()],
        library_dirs=[str(random_lib)],
        libraries=["npyrandom"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    ext_kwargs["ext_modules"] = cythonize([ext], compiler_directives={"language_level": 3})

setup(**ext_kwargs)
