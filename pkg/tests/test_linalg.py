import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fff.errors import DimensionMismatch, SingularMatrix
from fff.linalg import (ProbeKind, hutchinson_trace, inverse, log_abs_det, orthonormal_probes, rng_stream,
                        sample_probe, solve)


def cofactor_det(m):
    """Laplace expansion along the first row (independent oracle)."""
    n = len(m)
    if n == 1:
        return m[0][0]
    return sum((-1) ** j * m[0][j] * cofactor_det([row[:j] + row[j + 1:] for row in m[1:]]) for j in range(n))


def test_log_abs_det_examples(rng):
    assert log_abs_det(np.eye(3)) == 0.0
    assert log_abs_det(np.diag([2.0, 3.0])) == pytest.approx(1.791759469228055, abs=1e-15)
    a = rng.uniform(-1, 1, size=(4, 4))
    ref = math.log(abs(cofactor_det(a.tolist())))
    assert log_abs_det(a) == pytest.approx(ref, rel=1e-10)


def test_log_abs_det_batch_and_errors(rng):
    a = rng.standard_normal((5, 3, 3))
    np.testing.assert_allclose(log_abs_det(a), [log_abs_det(m) for m in a], rtol=1e-14)
    with pytest.raises(SingularMatrix):
        log_abs_det(np.zeros((2, 2)))
    b = a.copy()
    b[3] = np.ones((3, 3))
    with pytest.raises(SingularMatrix) as info:
        log_abs_det(b)
    assert info.value.index == 3
    with pytest.raises(DimensionMismatch):
        log_abs_det(np.ones((2, 3)))
    with pytest.raises(ValueError):
        log_abs_det(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_solve_examples(rng):
    b = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(solve(np.eye(3), b), b)
    np.testing.assert_allclose(solve(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])
    a = rng.standard_normal((5, 5)) + 5 * np.eye(5)
    rhs = rng.standard_normal(5)
    assert np.linalg.norm(a @ solve(a, rhs) - rhs) < 1e-12
    with pytest.raises(SingularMatrix):
        solve(np.zeros((2, 2)), np.ones(2))
    with pytest.raises(DimensionMismatch):
        solve(np.eye(2), np.ones(3))


def test_batched_solve_and_inverse(rng):
    a = rng.standard_normal((4, 3, 3)) + 3 * np.eye(3)
    b = rng.standard_normal((4, 3))
    x = solve(a, b)
    np.testing.assert_allclose(np.einsum("bij,bj->bi", a, x), b, atol=1e-12)
    np.testing.assert_allclose(inverse(a) @ a, np.broadcast_to(np.eye(3), a.shape), atol=1e-12)


def test_probe_examples():
    v = sample_probe(3, ProbeKind.SPHERE, rng_stream(1))
    assert v @ v == pytest.approx(3.0, abs=1e-12)
    assert sample_probe(1, "rademacher", rng_stream(2))[0] in (-1.0, 1.0)
    draws = sample_probe(8, "gaussian", rng_stream(3), size=10**6)
    cov = draws.T @ draws / len(draws)
    assert np.max(np.abs(cov - np.eye(8))) < 0.01


@pytest.mark.parametrize("kind", ["rademacher", "sphere"])
def test_probe_second_moment(kind):
    draws = sample_probe(4, kind, rng_stream(4), size=200_000)
    cov = draws.T @ draws / len(draws)
    assert np.max(np.abs(cov - np.eye(4))) < 0.02


def test_hutchinson_examples():
    for kind in ("rademacher", "sphere"):
        assert hutchinson_trace(np.eye(5), 7, kind, rng_stream(5)) == pytest.approx(5.0, abs=1e-12)
    k = 10**5
    probes = sample_probe(3, "gaussian", rng_stream(6), size=k)
    a = np.diag([1.0, 2.0, 3.0])
    vals = np.einsum("ki,ij,kj->k", probes, a, probes)
    se = vals.std(ddof=1) / math.sqrt(k)
    assert abs(hutchinson_trace(a, k, probes=probes) - 6.0) < 3 * se


@given(st.integers(1, 7), st.integers(0, 2**31))
def test_orthonormal_probes_give_exact_trace(n, seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((n, n))
    est = hutchinson_trace(a, n, probes=orthonormal_probes(n, r))
    assert est == pytest.approx(np.trace(a), abs=1e-10 * (1 + np.abs(a).sum()))


def test_rng_stream_is_reproducible_and_split():
    a = rng_stream(7, 1, 2).standard_normal(5)
    np.testing.assert_array_equal(a, rng_stream(7, 1, 2).standard_normal(5))
    assert not np.array_equal(a, rng_stream(7, 1, 3).standard_normal(5))
    assert not np.array_equal(a, rng_stream(8, 1, 2).standard_normal(5))


@given(st.integers(1, 6), st.integers(0, 2**31))
def test_log_abs_det_matches_numpy(n, seed):
    a = np.random.default_rng(seed).standard_normal((n, n)) + 0.5 * np.eye(n)
    sign, ref = np.linalg.slogdet(a)
    if sign == 0:
        return
    assert log_abs_det(a) == pytest.approx(ref, abs=1e-9)


def test_permutation_invariance(rng):
    a = rng.standard_normal((4, 4))
    for perm in itertools.permutations(range(4)):
        assert log_abs_det(a[list(perm)]) == pytest.approx(log_abs_det(a), abs=1e-12)
