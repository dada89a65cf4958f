import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fff import checkpoint, datasets as ds, nn
from fff.errors import NoStableBeta
from fff.likelihood import reconstruction_report
from fff.linalg import rng_stream
from fff.loss import fff_loss_and_grads
from fff.train import (AdamState, Dataset, TrainConfig, adam_step, beta_search, classify_trace,
                       clip_global_norm, learning_rate, read_metrics_csv, train, write_metrics_csv)
from fff.verify import partition_loss

# -- optimizer --------------------------------------------------------------


def test_adam_zero_gradient():
    p = np.array([1.0, -2.0])
    state = AdamState.like(p)
    adam_step(p, np.zeros(2), state, 0.1)
    np.testing.assert_array_equal(p, [1.0, -2.0])
    np.testing.assert_array_equal(state.m, 0.0)
    state = AdamState(np.array([0.1, 0.2]), np.array([0.3, 0.4]), t=3)
    adam_step(p, np.zeros(2), state, 0.1)
    np.testing.assert_allclose(state.m, [0.09, 0.18])
    np.testing.assert_allclose(state.v, [0.3 * 0.999, 0.4 * 0.999])


def test_adam_constant_gradient_step_tends_to_lr():
    p = np.zeros(2)
    state = AdamState.like(p)
    for _ in range(2000):
        before = p.copy()
        adam_step(p, np.array([0.3, -7.0]), state, 0.01)
    np.testing.assert_allclose(before - p, [0.01, -0.01], rtol=1e-6)


def test_adam_quadratic_bowl():
    p = np.array([1.0, 1.0])
    state = AdamState.like(p)
    for _ in range(500):
        adam_step(p, 2 * p, state, 0.1)
    assert np.linalg.norm(p) < 1e-3


def test_clip_examples():
    g = np.array([0.3, 0.4])
    assert clip_global_norm(g, 1.0) == pytest.approx(0.5)
    np.testing.assert_array_equal(g, [0.3, 0.4])
    g = np.array([3.0, 4.0])
    assert clip_global_norm(g, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(g, [0.6, 0.8])
    with pytest.raises(ValueError):
        clip_global_norm(g, 0.0)


@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_clip_bounds_joint_norm(seed, max_norm):
    r = np.random.default_rng(seed)
    parts = [r.standard_normal(5) * 100, r.standard_normal(3)]
    clip_global_norm(parts, max_norm)
    assert math.sqrt(sum(np.dot(a, a) for a in parts)) <= max_norm + 1e-12 * max(1.0, max_norm)


def test_schedules():
    cfg = TrainConfig(lr=0.1, schedule="exponential", gamma=0.5, steps=10)
    assert learning_rate(cfg, 3) == pytest.approx(0.0125)
    cfg = TrainConfig(lr=0.1, schedule="one_cycle", steps=100)
    lrs = np.array([learning_rate(cfg, s) for s in range(100)])
    assert lrs[0] == pytest.approx(0.004)
    assert lrs.max() == pytest.approx(0.1)
    assert lrs[-1] == pytest.approx(0.004)
    assert np.argmax(lrs) == 30
    assert learning_rate(TrainConfig(lr=0.2), 50) == 0.2


@pytest.mark.parametrize("bad", [dict(lr=0), dict(beta=-1), dict(gamma=0), dict(gamma=1.5), dict(schedule="cyclic"),
                                 dict(objective="vae"), dict(probe_kind="cauchy"), dict(steps=0), dict(grad_clip=-1)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


# -- training runs ----------------------------------------------------------

FIG2 = dict(steps=3000, batch_size=4096, lr=0.05, beta=1.0, probe_kind="sphere", schedule="exponential",
            gamma=0.999, eval_every=500)


def _fig2_data():
    return Dataset(ds.moment_matched_normal(4096, 1.5, rng_stream(0, 1)).reshape(-1, 1))


def test_linear_model_reaches_known_minimum():
    spec = nn.linear_spec(1, bias=False)
    res = train(TrainConfig(**FIG2), spec, spec, _fig2_data(),
                encoder=nn.linear_params([[1.0]]), decoder=nn.linear_params([[0.5]]))
    a, b = res.encoder.flat[0], res.decoder.flat[0]
    assert abs(abs(a) - 2 / 3) < 1e-3 and abs(abs(b) - 1.5) < 1e-3
    assert a * b > 0


def test_training_is_deterministic(tmp_path):
    spec = nn.NetworkSpec(2, hidden_widths=(8,))
    data = Dataset(ds.two_moons_sample(512, 0.1, rng_stream(0)))
    cfg = TrainConfig(steps=40, batch_size=64, eval_every=10, final_layer_scale=0.1)
    one, two = train(cfg, spec, spec, data), train(cfg, spec, spec, data)
    assert [r.as_list() for r in one.metrics] == [r.as_list() for r in two.metrics]
    np.testing.assert_array_equal(one.encoder.flat, two.encoder.flat)
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, one.metrics)
    assert [r.as_list() for r in read_metrics_csv(path)] == [r.as_list() for r in one.metrics]
    assert len(one.metrics) == 4 and one.metrics[-1].step == 40


def test_checkpoint_round_trip_reproduces_loss(tmp_path):
    spec = nn.NetworkSpec(2, hidden_widths=(8,))
    data = Dataset(ds.two_moons_sample(256, 0.1, rng_stream(0)))
    res = train(TrainConfig(steps=20, batch_size=64, final_layer_scale=0.1), spec, spec, data)
    path = tmp_path / "ck.json"
    checkpoint.save(path, res.model, {"seed": 0, "beta": 10.0})
    model, meta = checkpoint.load(path)
    assert meta["beta"] == 10.0
    cfg = TrainConfig().loss_config()
    a = fff_loss_and_grads(data.x[:64], res.encoder, res.decoder, cfg, rng_stream(9))
    b = fff_loss_and_grads(data.x[:64], model.encoder, model.decoder, cfg, rng_stream(9))
    assert a.values() == b.values()
    np.testing.assert_array_equal(a.grad_theta.flat, b.grad_theta.flat)


def _monotone(encoder, lo=-7, hi=7):
    dz = np.diff(nn.forward(encoder, np.linspace(lo, hi, 2001)[:, None])[:, 0])
    return bool(np.all(dz > 0) or np.all(dz < 0))


GMM_CFG = dict(steps=1500, batch_size=256, lr=3e-3, schedule="one_cycle", grad_clip=10, eval_every=500)


@pytest.fixture(scope="module")
def gmm_problem():
    d = ds.two_mode_gmm(4.0, 1.0)
    beta_crit = partition_loss(d, [[0], [1]], 1.0).beta_crit
    x = ds.gmm_sample(d, 4000, rng_stream(0, 1)).reshape(-1, 1)
    return Dataset(x), beta_crit, nn.NetworkSpec(1, hidden_widths=(32, 32))


def test_large_beta_gives_invertible_map(gmm_problem):
    data, beta_crit, spec = gmm_problem
    res = train(TrainConfig(beta=max(10.0, 10 * beta_crit), **GMM_CFG), spec, spec, data)
    assert reconstruction_report(res.model, data.x)["mean_squared_error"] < 1e-2
    assert _monotone(res.encoder)


def test_small_beta_merges_modes(gmm_problem):
    """Below the critical beta the optimum folds one mode onto the other."""
    data, beta_crit, spec = gmm_problem
    res = train(TrainConfig(beta=0.1 * beta_crit, **GMM_CFG), spec, spec, data)
    assert reconstruction_report(res.model, data.x)["mean_squared_error"] > 1.0
    assert not _monotone(res.encoder)


def test_surrogate_tracks_exact_training():
    d = ds.GmmDensity([0.5, 0.5], [[-1.5, 0.0], [1.5, 0.5]], [[0.6, 0.8], [0.8, 0.5]])
    data = Dataset(ds.gmm_sample(d, 4000, rng_stream(0, 1)))
    ev = Dataset(ds.gmm_sample(d, 1000, rng_stream(0, 2)))
    spec = nn.NetworkSpec(2, hidden_widths=(32, 32))
    cfg = dict(steps=1000, batch_size=256, lr=3e-3, beta=10.0, schedule="one_cycle", grad_clip=10,
               eval_every=250, eval_points=1000)
    fff = train(TrainConfig(**cfg), spec, spec, data, eval_data=ev)
    exact = train(TrainConfig(objective="exact", **cfg), spec, spec, data, eval_data=ev)
    a = np.array([r.nll_exact for r in fff.metrics])
    b = np.array([r.nll_exact for r in exact.metrics])
    assert np.max(np.abs(a - b)) < 0.2


def test_rejects_mismatched_data():
    spec = nn.NetworkSpec(2)
    with pytest.raises(ValueError):
        train(TrainConfig(steps=1), spec, spec, Dataset(np.zeros((4, 3))))
    with pytest.raises(ValueError):
        train(TrainConfig(steps=1), spec, spec, Dataset(np.zeros((4, 2)), np.zeros((4, 1))))


# -- beta search ------------------------------------------------------------


def test_classify_trace():
    assert classify_trace([3.0, 2.5, 2.4]) == (True, "")
    assert not classify_trace([3.0, float("nan")])[0]
    assert not classify_trace([3.0, 9.0])[0]
    assert not classify_trace([])[0]


def test_beta_search_standard_normal():
    spec = nn.NetworkSpec(2, hidden_widths=(8,))
    data = Dataset(rng_stream(0).standard_normal((1024, 2)))
    res = beta_search(TrainConfig(beta=1.0, batch_size=128, lr=1e-3), spec, spec, data, max_rounds=3)
    assert res.trials[0].stable
    assert res.beta == min(t.beta for t in res.trials)
    np.testing.assert_allclose([t.beta for t in res.trials], [1.0, 0.1, 0.01])


def test_beta_search_raises_when_nothing_is_stable(monkeypatch):
    from fff import train as train_mod
    monkeypatch.setattr(train_mod, "probe_beta",
                        lambda cfg, e, d, data, beta, *a: train_mod.BetaTrial(beta, False, [], [], "forced"))
    spec = nn.NetworkSpec(1)
    with pytest.raises(NoStableBeta):
        beta_search(TrainConfig(), spec, spec, Dataset(np.zeros((4, 1))), max_rounds=2)
