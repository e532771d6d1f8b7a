import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("MLPELL_NO_EXT"):
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "mlpell._ckernel",
                ["src/mlpell/_ckernel.pyx"],
                include_dirs=[np.get_include()],
                # no FMA contraction: the kernel must round exactly like the Python fallback
                extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
