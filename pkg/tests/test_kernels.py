import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fff import _pure, kernels

try:
    from fff import _kernels
except ImportError:  # extension not built
    _kernels = None

BACKENDS = [pytest.param(_pure, id="python")]
if _kernels is not None:
    BACKENDS.append(pytest.param(_kernels, id="cython"))


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")
    if _kernels is not None:
        assert kernels.BACKEND == "cython"


@pytest.mark.parametrize("impl", BACKENDS)
def test_logabsdet_matches_slogdet(impl, rng):
    a = rng.standard_normal((50, 5, 5))
    logdet, bad = impl.batched_logabsdet(a.copy())
    assert bad == -1
    np.testing.assert_allclose(logdet, np.linalg.slogdet(a)[1], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("impl", BACKENDS)
def test_logabsdet_flags_first_singular(impl, rng):
    a = rng.standard_normal((6, 3, 3))
    a[2, :, 0] = 0.0
    a[4] = 0.0
    _, bad = impl.batched_logabsdet(a)
    assert bad == 2


@pytest.mark.parametrize("impl", BACKENDS)
def test_solve_residual(impl, rng):
    a = rng.standard_normal((20, 4, 4)) + 4 * np.eye(4)
    b = rng.standard_normal((20, 4, 3))
    x, bad = impl.batched_solve(a, b)
    assert bad == -1
    np.testing.assert_allclose(a @ x, b, atol=1e-12)


@pytest.mark.parametrize("impl", BACKENDS)
@pytest.mark.parametrize("kind", [0, 1])
def test_activation_derivatives_match_finite_differences(impl, kind):
    p = np.linspace(-4, 4, 81).reshape(9, 9)
    h = 1e-5
    s, d1, d2 = impl.activation_derivs(p, kind)
    sp, d1p, _ = impl.activation_derivs(p + h, kind)
    sm, d1m, _ = impl.activation_derivs(p - h, kind)
    np.testing.assert_allclose(d1, (sp - sm) / (2 * h), atol=1e-7)
    np.testing.assert_allclose(d2, (d1p - d1m) / (2 * h), atol=1e-7)
    ref = np.tanh(p) if kind == 0 else p / (1 + np.exp(-p))
    np.testing.assert_allclose(s, ref, atol=1e-14)


@pytest.mark.skipif(_kernels is None, reason="extension not built")
@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**31))
def test_backends_agree(n, batch, seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((batch, n, n)) + 2 * np.eye(n)
    b = r.standard_normal((batch, n, 2))
    ld_py, bad_py = _pure.batched_logabsdet(a.copy())
    ld_cy, bad_cy = _kernels.batched_logabsdet(a.copy())
    assert bad_py == bad_cy
    np.testing.assert_allclose(ld_py, ld_cy, rtol=1e-12, atol=1e-12)
    x_py, _ = _pure.batched_solve(a.copy(), b.copy())
    x_cy, _ = _kernels.batched_solve(a.copy(), b.copy())
    np.testing.assert_allclose(x_py, x_cy, rtol=1e-10, atol=1e-10)
    p = r.standard_normal((batch, n))
    for kind in (0, 1):
        for u, v in zip(_pure.activation_derivs(p, kind), _kernels.activation_derivs(p, kind)):
            np.testing.assert_allclose(u, v, rtol=1e-13, atol=1e-15)


def test_inputs_not_modified(rng):
    a = rng.standard_normal((3, 4, 4))
    keep = a.copy()
    kernels.batched_logabsdet(a)
    kernels.batched_solve(a, rng.standard_normal((3, 4, 1)))
    np.testing.assert_array_equal(a, keep)
