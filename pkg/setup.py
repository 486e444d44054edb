from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/dgfunnel/_simcore.pyx",
        compiler_directives={"language_level": "3"},
    )
except Exception:
    # No Cython / no compiler: the package falls back to the pure-Python
    # integrator core at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
