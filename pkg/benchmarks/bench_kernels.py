"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints the median time per call for each kernel and backend, the speedup,
and the largest difference between the two backends' outputs. The
end-to-end rows time full library calls with each backend forced via
``FFF_BACKEND``, in a subprocess so the selection happens at import.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from fff import _pure

try:
    from fff import _kernels
except ImportError:
    _kernels = None


def _median_time(fn, repeat):
    return float(np.median(timeit.repeat(fn, number=1, repeat=repeat)))


def _cases(rng):
    stacks = {
        "logabsdet B=4096 D=2": (rng.standard_normal((4096, 2, 2)) + 2 * np.eye(2),),
        "logabsdet B=1024 D=8": (rng.standard_normal((1024, 8, 8)) + 3 * np.eye(8),),
        "logabsdet B=64 D=32": (rng.standard_normal((64, 32, 32)) + 6 * np.eye(32),),
    }
    for name, (a,) in list(stacks.items()):
        yield "batched_logabsdet", name, (a,)
    a = rng.standard_normal((1024, 8, 8)) + 3 * np.eye(8)
    yield "batched_solve", "solve B=1024 D=8 m=8", (a, rng.standard_normal((1024, 8, 8)))
    p = rng.standard_normal((512, 128))
    yield "activation_derivs", "tanh 512x128", (p, 0)
    yield "activation_derivs", "silu 512x128", (p, 1)


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape == ():
        return float(abs(a - b))
    return float(np.max(np.abs(a - b)))


END_TO_END = """
import timeit, numpy as np
from fff import kernels, nn
from fff.likelihood import ModelPair, log_likelihood_decoder
from fff.linalg import rng_stream
from fff.loss import LossConfig, fff_loss_and_grads
spec = nn.NetworkSpec({dim}, hidden_widths=(64, 64), activation="{act}")
enc, dec = nn.init_params(spec, 1, 0.3), nn.init_params(spec, 2, 0.3)
x = rng_stream(0, 1).standard_normal(({batch}, {dim}))
if "{task}" == "loss":
    fn = lambda: fff_loss_and_grads(x, enc, dec, LossConfig(beta=10.0), rng_stream(0, 2))
else:
    fn = lambda: log_likelihood_decoder(ModelPair(enc, dec), x)
print(kernels.BACKEND, float(np.median(timeit.repeat(fn, number=1, repeat={repeat}))))
"""

E2E_CASES = [
    ("FFF loss+grads tanh D=2 B=256", dict(task="loss", act="tanh", dim=2, batch=256)),
    ("FFF loss+grads silu D=2 B=256", dict(task="loss", act="silu", dim=2, batch=256)),
    ("exact log-lik tanh D=8 B=1024", dict(task="nll", act="tanh", dim=8, batch=1024)),
]


def _end_to_end(backend, case, repeat):
    env = {**os.environ, "FFF_BACKEND": backend}
    out = subprocess.run([sys.executable, "-c", END_TO_END.format(repeat=repeat, **case)], env=env,
                         capture_output=True, text=True)
    if out.returncode:
        return None
    name, t = out.stdout.split()
    return float(t) if name == backend else None


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}{'max |diff|':>14}")
    for kernel, label, inputs in _cases(rng):
        py = getattr(_pure, kernel)
        t_py = _median_time(lambda: py(*[np.copy(v) if isinstance(v, np.ndarray) else v for v in inputs]), args.repeat)
        if _kernels is None:
            print(f"{label:<28}{1e3 * t_py:>14.3f}{'-':>14}{'-':>10}{'-':>14}")
            continue
        cy = getattr(_kernels, kernel)
        t_cy = _median_time(lambda: cy(*[np.copy(v) if isinstance(v, np.ndarray) else v for v in inputs]), args.repeat)
        diff = _max_diff(py(*inputs), cy(*inputs))
        print(f"{label:<28}{1e3 * t_py:>14.3f}{1e3 * t_cy:>14.3f}{t_py / t_cy:>10.1f}{diff:>14.2e}")

    print(f"\n{'end to end, MLP 64x64':<32}{'python [ms]':>12}{'cython [ms]':>12}{'speedup':>10}")
    for label, case in E2E_CASES:
        t_py = _end_to_end("python", case, args.repeat)
        t_cy = _end_to_end("cython", case, args.repeat)
        cy = "-" if t_cy is None else f"{1e3 * t_cy:.3f}"
        sp = "-" if t_cy is None else f"{t_py / t_cy:.1f}"
        print(f"{label:<32}{1e3 * t_py:>12.3f}{cy:>12}{sp:>10}")


if __name__ == "__main__":
    main()
