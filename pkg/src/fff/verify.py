"""Numerical checks of the surrogate's theory.

* the linear 1-D landscape of the exact-inverse loss and of the FFF loss,
  with critical-point classification
* the partition construction showing when a non-invertible encoder beats the
  invertible one, and the resulting critical beta
* the trace identity for analytic-inverse pairs and the Frobenius bound on the
  surrogate error for arbitrary pairs
"""
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import nn
from .datasets import GmmDensity, gmm_logpdf, moment_matched_normal
from .errors import (BoundViolated, DivergentGradient, IdentityViolated, NotCritical,
                     NotSeparable, SingularMatrix)
from .linalg import inverse, orthonormal_probes, rng_stream
from .loss import LossConfig, fff_loss_and_grads, surrogate_exactness_gap

VARIANTS = ("f_inverse", "g")


# -- linear 1-D landscape -----------------------------------------------------

@dataclass
class LinearModel1D:
    """Encoder f(x) = a x, decoder g(z) = b z, data N(0, data_sigma^2)."""

    a: float = 1.0
    b: float = 0.5
    data_sigma: float = 1.5
    beta: float = 1.0

    def __post_init__(self):
        if self.data_sigma <= 0 or self.beta <= 0:
            raise ValueError("data_sigma and beta must be positive")


def landscape_gradients(m, variant):
    """Closed-form population gradient field (a, b) -> (dL/da, dL/db).

    Loss per sample: 0.5 (a x)^2 - [log|a| or SG(b) a] + beta (a b x - x)^2.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    s2 = m.data_sigma**2
    beta = m.beta

    def field(a, b):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        recon_a = 2.0 * beta * s2 * b * (a * b - 1.0)
        db = 2.0 * beta * s2 * a * (a * b - 1.0)
        if variant == "f_inverse":
            if np.any(a == 0):
                raise DivergentGradient("log|a| diverges at a = 0")
            da = s2 * a - 1.0 / a + recon_a
        else:
            da = s2 * a - b + recon_a
        return da, db

    return field


def critical_points(m, variant):
    """Exact zeros of the landscape field."""
    a = 1.0 / m.data_sigma
    points = [(a, m.data_sigma), (-a, -m.data_sigma)]
    if variant == "g":
        points.append((0.0, 0.0))
    return points


def field_jacobian(field, point, h=1e-5):
    a, b = point
    cols = []
    for da, db in ((h, 0.0), (0.0, h)):
        fp = np.array(field(a + da, b + db), dtype=np.float64)
        fm = np.array(field(a - da, b - db), dtype=np.float64)
        cols.append((fp - fm) / (2.0 * h))
    return np.stack(cols, axis=1)


def classify_critical_point(field, point, h=1e-5, tol=1e-10):
    """Classify a zero of a 2-D vector field by the real parts of its Jacobian's eigenvalues.

    For a gradient field, positive real parts mean a minimum. Mixed signs are
    reported as a saddle, vanishing real parts with rotation as a center.
    """
    value = np.array(field(*point), dtype=np.float64)
    if np.linalg.norm(value) >= tol:
        raise NotCritical(f"field at {point} is {value}, not zero")
    eig = np.linalg.eigvals(field_jacobian(field, point, h))
    re = eig.real
    scale = max(1.0, float(np.max(np.abs(eig))))
    eps = 1e-6 * scale
    if np.all(np.abs(re) < eps):
        return "center"
    if np.all(re > eps):
        return "minimum"
    if np.all(re < -eps):
        return "maximum"
    return "saddle"


def landscape_grid(m, a_range=(-2.0, 2.0), b_range=(-2.5, 2.5), n=41):
    """Rows (variant, a, b, da, db, magnitude) on an n x n grid for both variants.

    Grid points with a = 0 are skipped for the exact-inverse variant.
    """
    rows = []
    a_vals = np.linspace(*a_range, n)
    b_vals = np.linspace(*b_range, n)
    for variant in VARIANTS:
        field = landscape_gradients(m, variant)
        for a in a_vals:
            if variant == "f_inverse" and a == 0:
                continue
            for b in b_vals:
                da, db = field(a, b)
                rows.append((variant, float(a), float(b), float(da), float(db), float(math.hypot(da, db))))
    return rows


def linear_model_mc_gradient(m, n, rng, batch=10_000, probe_kind="gaussian"):
    """Monte-Carlo (dL/da, dL/db) of the FFF loss for the linear model, with standard errors."""
    enc = nn.linear_params([[m.a]])
    dec = nn.linear_params([[m.b]])
    cfg = LossConfig(beta=m.beta, probe_kind=probe_kind)
    grads = []
    for i in range(max(1, n // batch)):
        x = m.data_sigma * rng.standard_normal((batch, 1))
        out = fff_loss_and_grads(x, enc, dec, cfg, rng)
        grads.append([out.grad_theta.flat[0], out.grad_phi.flat[0]])
    grads = np.array(grads)
    se = grads.std(axis=0, ddof=1) / np.sqrt(len(grads)) if len(grads) > 1 else np.full(2, np.nan)
    return grads.mean(axis=0), se


def descend_linear_model(m, steps=2000, lr=0.05, n=4096, seed=0, probe_kind="sphere"):
    """Plain gradient descent on the FFF loss of the linear model from (m.a, m.b).

    Uses a moment-matched data sample and norm-1 probes, so each full-batch
    gradient equals the population gradient.
    """
    x = moment_matched_normal(n, m.data_sigma, rng_stream(seed, 0))
    enc = nn.linear_params([[m.a]])
    dec = nn.linear_params([[m.b]])
    cfg = LossConfig(beta=m.beta, probe_kind=probe_kind)
    rng = rng_stream(seed, 1)
    for _ in range(steps):
        out = fff_loss_and_grads(x, enc, dec, cfg, rng)
        enc.flat -= lr * out.grad_theta.flat
        dec.flat -= lr * out.grad_phi.flat
    return float(enc.flat[0]), float(dec.flat[0])


# -- partitions and critical beta ----------------------------------------------

@dataclass
class PartitionSolution:
    partition: list
    alpha: np.ndarray
    entropy: float
    r_min: float
    data_entropy: float
    beta: float
    loss: float

    @property
    def beta_crit(self):
        """Beta below which this solution undercuts the invertible one (inf for the trivial partition)."""
        if self.r_min == 0:
            return math.inf if self.entropy > 0 else 0.0
        return self.entropy / self.r_min

    def loss_at(self, beta):
        return self.data_entropy - self.entropy + beta * self.r_min


def set_partitions(items):
    """All set partitions of ``items`` (as lists of lists)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for smaller in set_partitions(rest):
        for i in range(len(smaller)):
            yield smaller[:i] + [[first] + smaller[i]] + smaller[i + 1:]
        yield [[first]] + smaller


def _grid(d, pad=12.0, n=200_001):
    mu = d.means[:, 0]
    sd = d.stds[:, 0]
    return np.linspace(np.min(mu - pad * sd), np.max(mu + pad * sd), n)


def differential_entropy_1d(d):
    x = _grid(d)
    logq = gmm_logpdf(d, x)
    q = np.exp(logq)
    return float(-np.trapezoid(q * logq, x))


def _check_separable(d, partition, n_std=5.0):
    group = {k: g for g, comps in enumerate(partition) for k in comps}
    mu, sd = d.means[:, 0], d.stds[:, 0]
    for i, j in itertools.combinations(range(d.n_components), 2):
        if group[i] != group[j] and abs(mu[i] - mu[j]) < n_std * max(sd[i], sd[j]):
            raise NotSeparable(f"components {i} and {j} are closer than {n_std} standard deviations")


def _quantile_maps(d, partition, z):
    """T_j(z): monotone map pushing N(0, 1) to the mixture restricted to group j."""
    x = _grid(d, n=100_001)
    maps, alpha = [], []
    for comps in partition:
        w = d.weights[comps]
        cdf = np.zeros_like(x)
        for k, wk in zip(comps, w):
            cdf += wk * norm.cdf(x, d.means[k, 0], d.stds[k, 0])
        a = w.sum()
        alpha.append(a)
        maps.append(np.interp(norm.cdf(z), cdf / a, x))
    return np.array(maps), np.array(alpha)


def min_reconstruction_error(d, partition, n_z=4001):
    """Smallest E|g(f(x)) - x|^2 over orientation choices, with g the conditional mean.

    Each group is mapped to N(0, 1) by a monotone quantile map (increasing or
    decreasing); given z, x is one of the group preimages with probability
    alpha_j, so the best decoder returns their alpha-weighted mean.
    """
    if len(partition) == 1:
        return 0.0
    z = np.linspace(-8.0, 8.0, n_z)
    pz = norm.pdf(z)
    up, alpha = _quantile_maps(d, partition, z)
    down = up[:, ::-1]  # T_j(-z)
    best = math.inf
    for signs in itertools.product((1, -1), repeat=len(partition) - 1):
        t = np.stack([up[0]] + [up[j + 1] if s > 0 else down[j + 1] for j, s in enumerate(signs)])
        mean = alpha @ t
        resid = alpha @ (t - mean) ** 2
        best = min(best, float(np.trapezoid(resid * pz, z)))
    return best


def partition_loss(d, partition, beta):
    """Loss h(q) - H(P) + beta R_min(P) of the per-group solution for a 1-D mixture."""
    if d.dim != 1:
        raise ValueError("partition_loss supports 1-D mixtures")
    partition = [list(g) for g in partition]
    if sorted(k for g in partition for k in g) != list(range(d.n_components)):
        raise ValueError("partition must cover every component exactly once")
    _check_separable(d, partition)
    alpha = np.array([d.weights[g].sum() for g in partition])
    entropy = float(-np.sum(alpha * np.log(alpha)))
    r_min = min_reconstruction_error(d, partition)
    h = differential_entropy_1d(d)
    return PartitionSolution(partition, alpha, entropy, r_min, h, beta, h - entropy + beta * r_min)


# -- theorem checks -------------------------------------------------------------

def _random_linear_pair(dim, rng):
    while True:
        a = rng.standard_normal((dim, dim)) / np.sqrt(dim) + np.eye(dim) * rng.uniform(0.5, 2.0)
        if np.linalg.cond(a) < 1e3:
            break
    b = rng.standard_normal(dim)
    a_inv = inverse(a)
    return nn.linear_params(a, b), nn.linear_params(a_inv, -a_inv @ b), a


def theorem1_check(dim, rng, n_mc=0, batch=16, tol=1e-6):
    """Trace-surrogate encoder gradients vs. Jacobi's formula for an analytic-inverse linear pair.

    With a complete orthonormal probe set the surrogate is exact; the reference
    gradient of the exact loss is mean(z x^T) - A^-T for the weights and
    mean(z) for the bias. With ``n_mc`` > 0, Gaussian probes are also compared
    statistically (norm of the error against 3 joint standard errors).
    """
    enc, dec, a = _random_linear_pair(dim, rng)
    x = rng.standard_normal((batch, dim))
    z = nn.forward(enc, x)
    ref = enc.zeros_like()
    ref.weight(0)[...] = z.T @ x / batch - inverse(a).T
    ref.bias(0)[...] = z.mean(axis=0)

    cfg = LossConfig(beta=1.0)
    out = fff_loss_and_grads(x, enc, dec, cfg, probes=orthonormal_probes(dim, rng))
    rel = float(np.linalg.norm(out.grad_theta.flat - ref.flat) / np.linalg.norm(ref.flat))
    report = {"dim": dim, "basis_rel_error": rel, "basis_ok": rel <= tol}
    if rel > tol:
        raise IdentityViolated(f"basis-probe surrogate off by {rel:.3g} relative at dim {dim}")

    if n_mc:
        x0 = np.repeat(x[:1], 100, axis=0)
        z0 = nn.forward(enc, x0[:1])
        ref0 = enc.zeros_like()
        ref0.weight(0)[...] = z0.T @ x0[:1] - inverse(a).T
        ref0.bias(0)[...] = z0[0]
        means = np.array([
            fff_loss_and_grads(x0, enc, dec, cfg, rng).grad_theta.flat
            for _ in range(max(2, n_mc // len(x0)))
        ])
        est = means.mean(axis=0)
        se = means.std(axis=0, ddof=1) / np.sqrt(len(means))
        err = float(np.linalg.norm(est - ref0.flat))
        joint = float(np.sqrt(np.sum(se**2)))
        report.update(mc_error=err, mc_joint_se=joint, mc_ok=err <= 3.0 * joint,
                      mc_max_z=float(np.max(np.abs(est - ref0.flat)[se > 0] / se[se > 0])))
    return report


def _random_pair(dim, rng, hidden=(8,), activation="tanh"):
    spec = nn.NetworkSpec(dim, hidden_widths=hidden, activation=activation)
    enc = nn.init_params(spec, int(rng.integers(2**62)), float(rng.uniform(0.1, 0.8)))
    dec = nn.init_params(spec, int(rng.integers(2**62)), float(rng.uniform(0.1, 0.8)))
    return enc, dec


def theorem2_sweep(trials, dim, rng, hidden=(8,), slack=1e-9, raise_on_violation=True):
    """Check |tr(dJ_f J_g) - d log|det J_f|| <= ||dJ_f J_f^-1||_F ||J_f J_g - I||_F.

    Random encoder/decoder pairs, every parameter coordinate as a direction.
    Returns a (n, 4) array of rows (trial, direction, gap, bound).
    """
    if dim > 8:
        raise ValueError("dim must be <= 8 for exact Jacobians")
    rows = []
    for trial in range(trials):
        while True:
            enc, dec = _random_pair(dim, rng, hidden)
            x = rng.standard_normal(dim)
            try:
                gaps, bounds = surrogate_exactness_gap(enc, dec, x)
                break
            except SingularMatrix:
                continue
        for k, (g, b) in enumerate(zip(gaps, bounds)):
            rows.append((trial, k, g, b))
    table = np.array(rows, dtype=np.float64).reshape(-1, 4)
    violations = int(np.sum(table[:, 2] > table[:, 3] + slack))
    if violations and raise_on_violation:
        raise BoundViolated(f"{violations} directions exceed the bound")
    return table


def _max_ratio(table):
    live = table[:, 3] > 0
    return float(np.max(table[live, 2] / table[live, 3])) if np.any(live) else 0.0


def exact_inverse_gaps(dim, rng):
    """Gaps for an analytic-inverse linear pair; all should vanish."""
    enc, dec, _ = _random_linear_pair(dim, rng)
    return surrogate_exactness_gap(enc, dec, rng.standard_normal(dim))


# -- suite --------------------------------------------------------------------

SUITES = ("theorem1", "theorem2", "landscape", "partition")


def run_suite(suite="all", seed=0, theorem2_trials=1000, theorem1_seeds=100):
    """Run the verification checks; returns ``(ok, report)``."""
    names = SUITES if suite == "all" else (suite,)
    report = {}
    ok = True
    for name in names:
        rng = rng_stream(seed, SUITES.index(name))
        try:
            if name == "theorem1":
                worst = 0.0
                for dim in range(1, 9):
                    for s in range(theorem1_seeds):
                        r = theorem1_check(dim, rng_stream(seed, 10, dim, s))
                        worst = max(worst, r["basis_rel_error"])
                mc = theorem1_check(3, rng, n_mc=10_000)
                passed = worst <= 1e-6 and mc["mc_ok"]
                report[name] = {"ok": passed, "max_rel_error": worst, "mc": mc}
            elif name == "theorem2":
                table = theorem2_sweep(theorem2_trials, 3, rng, raise_on_violation=False)
                violations = int(np.sum(table[:, 2] > table[:, 3] + 1e-9))
                passed = violations == 0
                report[name] = {"ok": passed, "trials": theorem2_trials, "directions": len(table),
                                "violations": violations,
                                "max_gap": float(table[:, 2].max()),
                                "max_ratio": _max_ratio(table)}
            elif name == "landscape":
                m = LinearModel1D(1.0, 0.5, 1.5, 1.0)
                res = {}
                passed = True
                for variant in VARIANTS:
                    field = landscape_gradients(m, variant)
                    pts = critical_points(m, variant)
                    norms = [float(np.hypot(*field(*p))) for p in pts]
                    kinds = [classify_critical_point(field, p) for p in pts]
                    res[variant] = {"points": pts, "residuals": norms, "kinds": kinds}
                    passed &= max(norms) < 1e-12
                passed &= res["g"]["kinds"][-1] == "saddle"
                passed &= all(k == "minimum" for k in res["f_inverse"]["kinds"])
                a, b = descend_linear_model(m)
                res["descent_end"] = (a, b)
                passed &= abs(a - 2 / 3) < 1e-3 and abs(b - 1.5) < 1e-3
                res["ok"] = bool(passed)
                report[name] = res
            elif name == "partition":
                d = GmmDensity([0.5, 0.5], [[-4.0], [4.0]], [[1.0], [1.0]])
                sol = partition_loss(d, [[0], [1]], beta=1.0)
                oracle = math.log(2) / 16
                crossing = partition_loss(d, [[0], [1]], sol.beta_crit).loss
                passed = abs(sol.beta_crit - oracle) <= 0.05 * oracle and abs(crossing - sol.data_entropy) < 1e-9
                report[name] = {"ok": bool(passed), "beta_crit": sol.beta_crit, "oracle": oracle,
                                "r_min": sol.r_min, "entropy": sol.entropy}
        except Exception as exc:  # report, never crash the suite
            passed = False
            report[name] = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
        ok &= bool(report[name]["ok"])
    return ok, report
