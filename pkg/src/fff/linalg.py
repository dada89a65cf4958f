"""Dense linear algebra, probe vectors and seedable random streams."""
from enum import Enum

import numpy as np

from . import kernels
from .errors import DimensionMismatch, SingularMatrix


class ProbeKind(str, Enum):
    """Probe distributions for trace estimation. All satisfy E[v v^T] = I."""

    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    SPHERE = "sphere"


def rng_stream(seed, *keys):
    """Counter-based generator derived from ``seed`` and an integer key path.

    Streams with different key paths are statistically independent, and the
    same ``(seed, keys)`` always reproduces the same stream.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def _as_square_stack(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise DimensionMismatch(f"expected square matrix, got shape {m.shape}")
    return m


def log_abs_det(m):
    """log|det m| via LU with partial pivoting.

    Accepts a single (n, n) matrix or a (B, n, n) stack; returns a float or a
    length-B array accordingly.
    """
    m = _as_square_stack(m)
    single = m.ndim == 2
    stack = m.reshape(-1, m.shape[-1], m.shape[-1])
    if not np.all(np.isfinite(stack)):
        raise ValueError("matrix has non-finite entries")
    logdet, bad = kernels.batched_logabsdet(stack)
    if bad >= 0:
        raise SingularMatrix(index=None if single else bad)
    return float(logdet[0]) if single else logdet.reshape(m.shape[:-2])


def solve(m, b):
    """Solve ``m @ y = b``.

    ``m`` may be (n, n) with ``b`` of shape (n,) or (n, k), or a (B, n, n)
    stack with ``b`` of shape (B, n) or (B, n, k).
    """
    m = _as_square_stack(m)
    b = np.asarray(b, dtype=np.float64)
    single = m.ndim == 2
    stack = m[None] if single else m
    rhs = b[None] if single else b
    vec = rhs.ndim == 2
    if vec:
        rhs = rhs[..., None]
    if rhs.shape[:2] != stack.shape[:2]:
        raise DimensionMismatch(f"cannot solve {m.shape} with rhs {b.shape}")
    x, bad = kernels.batched_solve(stack, rhs)
    if bad >= 0:
        raise SingularMatrix(index=None if single else bad)
    if vec:
        x = x[..., 0]
    return x[0] if single else x


def inverse(m):
    m = _as_square_stack(m)
    eye = np.broadcast_to(np.eye(m.shape[-1]), m.shape)
    return solve(m, eye)


def sample_probe(dim, kind=ProbeKind.GAUSSIAN, rng=None, size=None):
    """Draw probe vectors with identity second moment.

    Returns shape (dim,) when ``size`` is None, else (*size, dim). Sphere
    probes have norm exactly sqrt(dim).
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    kind = ProbeKind(kind)
    rng = np.random.default_rng() if rng is None else rng
    shape = (dim,) if size is None else (*np.atleast_1d(size), dim)
    if kind is ProbeKind.GAUSSIAN:
        return rng.standard_normal(shape)
    if kind is ProbeKind.RADEMACHER:
        return rng.integers(0, 2, size=shape) * 2.0 - 1.0
    v = rng.standard_normal(shape)
    return v * (np.sqrt(dim) / np.linalg.norm(v, axis=-1, keepdims=True))


def hutchinson_trace(a, k, kind=ProbeKind.GAUSSIAN, rng=None, probes=None):
    """Estimate tr(a) as the mean of v^T a v over ``k`` probes.

    Pass ``probes`` (shape (k, n)) to use fixed vectors, e.g. a scaled
    orthonormal basis, instead of sampling.
    """
    a = _as_square_stack(a)
    if probes is None:
        probes = sample_probe(a.shape[0], kind, rng, size=k)
    probes = np.asarray(probes, dtype=np.float64)
    return float(np.mean(np.einsum("ki,ij,kj->k", probes, a, probes)))


def orthonormal_probes(dim, rng=None):
    """A random orthonormal basis scaled by sqrt(dim), as a (dim, dim) probe set.

    Averaging v^T a v over these rows gives tr(a) exactly.
    """
    if rng is None:
        q = np.eye(dim)
    else:
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        q = q * np.sign(np.diag(r))
    return np.sqrt(dim) * q.T
