import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from fff import verify as vf
from fff.datasets import GmmDensity, two_mode_gmm
from fff.errors import DivergentGradient, NotCritical, NotSeparable
from fff.linalg import rng_stream

FIG2 = vf.LinearModel1D(1.0, 0.5, 1.5, 1.0)


@pytest.mark.parametrize("variant", vf.VARIANTS)
def test_known_minima_are_zeros(variant):
    field = vf.landscape_gradients(FIG2, variant)
    for a, b in [(2 / 3, 1.5), (-2 / 3, -1.5)]:
        assert np.hypot(*field(a, b)) < 1e-12
    assert all(np.hypot(*field(*p)) < 1e-12 for p in vf.critical_points(FIG2, variant))


def test_g_variant_origin_is_a_saddle():
    field = vf.landscape_gradients(FIG2, "g")
    assert field(0.0, 0.0) == (0.0, 0.0)
    jac = vf.field_jacobian(field, (0.0, 0.0))
    np.testing.assert_allclose(jac, [[2.25, -5.5], [-4.5, 0.0]], atol=1e-8)
    eig = np.sort(np.linalg.eigvals(jac).real)
    np.testing.assert_allclose(eig, [-3.9755514407757913, 6.2255514407757913], atol=1e-7)
    assert vf.classify_critical_point(field, (0.0, 0.0)) == "saddle"
    with pytest.raises(DivergentGradient):
        vf.landscape_gradients(FIG2, "f_inverse")(0.0, 0.0)


def test_classification():
    field = vf.landscape_gradients(FIG2, "f_inverse")
    assert vf.classify_critical_point(field, (2 / 3, 1.5)) == "minimum"
    assert vf.classify_critical_point(lambda a, b: (-b, a), (0.0, 0.0)) == "center"
    assert vf.classify_critical_point(lambda a, b: (-a, -2 * b), (0.0, 0.0)) == "maximum"
    with pytest.raises(NotCritical):
        vf.classify_critical_point(field, (1.0, 1.0))
    with pytest.raises(ValueError):
        vf.landscape_gradients(FIG2, "h")


def test_closed_form_matches_monte_carlo_fff_gradient():
    m = vf.LinearModel1D(1.2, 0.7, 1.5, 1.0)
    mean, se = vf.linear_model_mc_gradient(m, 10**6, rng_stream(0, 1))
    ref = np.array(vf.landscape_gradients(m, "g")(m.a, m.b))
    assert np.linalg.norm(mean - ref) < 3 * np.linalg.norm(se)


def test_descent_reaches_positive_minimum():
    a, b = vf.descend_linear_model(FIG2)
    assert abs(a - 2 / 3) < 1e-3 and abs(b - 1.5) < 1e-3


def test_landscape_grid_shape():
    rows = vf.landscape_grid(FIG2, n=5)
    assert len(rows) == 20 + 25  # a = 0 skipped for f_inverse
    assert {r[0] for r in rows} == set(vf.VARIANTS)


def test_trivial_partition():
    d = two_mode_gmm(4.0, 1.0)
    sol = vf.partition_loss(d, [[0, 1]], 3.0)
    assert sol.entropy == 0.0 and sol.r_min == 0.0
    assert sol.loss == pytest.approx(sol.data_entropy)
    pdf = lambda x: 0.5 * (norm.pdf(x, -4, 1) + norm.pdf(x, 4, 1))
    ref = quad(lambda x: -pdf(x) * math.log(pdf(x)), -20, 20, points=[-4, 0, 4])[0]
    assert sol.data_entropy == pytest.approx(ref, abs=1e-8)
    # slightly below N(0, 1) entropy + log 2 because the modes overlap
    assert sol.data_entropy < 0.5 * math.log(2 * math.pi * math.e) + math.log(2)


def test_split_partition_critical_beta():
    d = two_mode_gmm(4.0, 1.0)
    sol = vf.partition_loss(d, [[0], [1]], 1.0)
    # conditional-mean decoder over both orientations, by quadrature:
    # same orientation leaves residual mu^2, opposite leaves E (z - mu)^2 = mu^2 + 1
    z = np.linspace(-10, 10, 20001)
    pz = np.exp(-0.5 * z**2) / math.sqrt(2 * math.pi)
    same = np.trapezoid(16.0 * pz, z)
    opposite = np.trapezoid((z - 4.0) ** 2 * pz, z)
    assert sol.r_min == pytest.approx(min(same, opposite), rel=1e-3)
    assert sol.entropy == pytest.approx(math.log(2))
    assert sol.beta_crit == pytest.approx(0.043321698784996582, rel=1e-3)


def test_three_modes_cross_at_critical_beta():
    d = GmmDensity([0.3, 0.3, 0.4], [[-9.0], [0.0], [9.0]], [[1.0], [1.0], [1.0]])
    sol = vf.partition_loss(d, [[0, 1], [2]], 1.0)
    bc = sol.beta_crit
    assert sol.loss_at(bc) == pytest.approx(sol.data_entropy, abs=1e-12)
    assert sol.loss_at(0.5 * bc) < sol.data_entropy < sol.loss_at(2 * bc)
    assert sol.entropy == pytest.approx(-(0.6 * math.log(0.6) + 0.4 * math.log(0.4)))


def test_partition_errors():
    close = GmmDensity([0.5, 0.5], [[-1.0], [1.0]], [[1.0], [1.0]])
    with pytest.raises(NotSeparable):
        vf.partition_loss(close, [[0], [1]], 1.0)
    with pytest.raises(ValueError):
        vf.partition_loss(two_mode_gmm(4.0, 1.0), [[0]], 1.0)
    assert len(list(vf.set_partitions(range(4)))) == 15


@pytest.mark.parametrize("dim", [1, 2, 5, 8])
def test_theorem1_basis_probes_exact(dim):
    for s in range(5):
        assert vf.theorem1_check(dim, rng_stream(1, dim, s))["basis_rel_error"] < 1e-10


def test_theorem1_scalar_closed_form():
    """Surrogate gradient of log|a| is 1/a for f(x) = a x with the exact inverse decoder."""
    from fff import nn
    from fff.loss import LossConfig, fff_loss_and_grads
    a = -1.7
    x = np.zeros((1, 1))
    out = fff_loss_and_grads(x, nn.linear_params([[a]]), nn.linear_params([[1 / a]]), LossConfig(),
                             probes=np.ones((1, 1)))
    assert -out.grad_theta.flat[0] == pytest.approx(1 / a, abs=1e-15)


def test_theorem1_monte_carlo():
    rep = vf.theorem1_check(3, rng_stream(2), n_mc=10_000)
    assert rep["mc_ok"]


def test_theorem2_small_sweep():
    table = vf.theorem2_sweep(50, 3, rng_stream(3))
    assert table.shape[1] == 4 and len(np.unique(table[:, 0])) == 50
    assert np.all(table[:, 2] <= table[:, 3] + 1e-9)
    gaps, _ = vf.exact_inverse_gaps(3, rng_stream(4))
    assert np.max(gaps) < 1e-10


def test_run_suite_reports_each_check():
    ok, report = vf.run_suite("partition")
    assert ok and report["partition"]["ok"]
    ok, report = vf.run_suite("theorem2", theorem2_trials=20)
    assert ok and report["theorem2"]["violations"] == 0
