"""Build hook for the optional compiled shallow-water kernel.

The package is pure Python except for one hot loop (the shallow-water
substep).  If Cython and a C compiler are available the extension is
built; otherwise installation proceeds and the numpy fallback is used
at runtime.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/ensda/models/_swe_kernel.pyx",
        compiler_directives={"language_level": "3"},
    )
    include_dirs = [np.get_include()]
except Exception:
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
