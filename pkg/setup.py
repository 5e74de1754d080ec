import os

from setuptools import Extension, setup


def build_ext_modules():
    if os.environ.get("NC_PURE_PYTHON", "") not in ("", "0"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        name="neighbor_confidence._ckernels",
        sources=[os.path.join("src", "neighbor_confidence", "_ckernels.pyx")],
        # no FMA contraction: kernels must match the numpy fallback bit for bit
        extra_compile_args=["-O3", "-ffp-contract=off"],
        optional=True,
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=build_ext_modules())
