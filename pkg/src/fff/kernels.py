"""Kernel backend selection.

The compiled extension is used when importable; set ``FFF_BACKEND=python``
before import to force the numpy fallback. tanh always goes through numpy,
whose vectorized tanh is faster than the scalar libm loop (see
benchmarks/bench_kernels.py).
"""
import os

from . import _pure

_requested = os.environ.get("FFF_BACKEND", "auto").lower()

if _requested == "python":
    _impl = _pure
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        _impl = _pure
        BACKEND = "python"

batched_logabsdet = _impl.batched_logabsdet
batched_solve = _impl.batched_solve


def activation_derivs(p, kind):
    return (_pure if kind == 0 else _impl).activation_derivs(p, kind)


__all__ = ["BACKEND", "batched_logabsdet", "batched_solve", "activation_derivs"]
