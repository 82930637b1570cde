"""Denoiser compute kernels with a compiled fast path.

The forward/backward passes of the noise-prediction network dominate the
runtime of pretraining, inversion and sampling.  Two interchangeable
implementations exist:

* ``_speedups`` -- Cython + BLAS, built at install time.
* ``_numpy``    -- pure numpy reference, always available.

The active backend is chosen once at import.  Set ``PLEDIFF_BACKEND=python``
to force the numpy path, ``PLEDIFF_BACKEND=compiled`` to require the
extension (raises if it failed to build).  Both backends implement the same
``forward_batch`` / ``backward_batch`` contract and agree to within BLAS
reduction-order noise; ``benchmarks/bench_kernels.py`` compares their speed.
"""

import os

from . import _numpy

_FORCE = os.environ.get("PLEDIFF_BACKEND", "").lower()

if _FORCE in ("", "compiled"):
    try:
        from . import _speedups as _impl

        if not hasattr(_impl, "forward_batch"):
            raise ImportError("compiled kernel module is incomplete")
        BACKEND = "compiled"
    except ImportError:
        if _FORCE == "compiled":
            raise
        _impl = _numpy
        BACKEND = "python"
elif _FORCE == "python":
    _impl = _numpy
    BACKEND = "python"
else:
    raise RuntimeError(f"unknown PLEDIFF_BACKEND value: {_FORCE!r}")

forward_batch = _impl.forward_batch
backward_batch = _impl.backward_batch

numpy_backend = _numpy


def available_backends():
    names = ["python"]
    try:
        from . import _speedups  # noqa: F401

        names.insert(0, "compiled")
    except ImportError:
        pass
    return names
