"""Toy densities, pairwise-potential Boltzmann targets and a conditional Gaussian task."""
import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateConfiguration, DimensionMismatch

LOG_2PI = float(np.log(2.0 * np.pi))


# -- Gaussian mixtures -------------------------------------------------------

@dataclass
class GmmDensity:
    """Gaussian mixture with diagonal covariances."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        if self.means.shape[0] != self.weights.size:
            self.means = self.means.T
        self.stds = np.broadcast_to(np.asarray(self.stds, dtype=np.float64), self.means.shape).copy()
        if not np.isclose(self.weights.sum(), 1.0) or np.any(self.weights < 0):
            raise ValueError("weights must lie on the simplex")
        if np.any(self.stds <= 0):
            raise ValueError("standard deviations must be positive")

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.weights.size

    def mean(self):
        return self.weights @ self.means

    def cov(self):
        mu = self.mean()
        second = np.einsum("k,ki,kj->ij", self.weights, self.means, self.means)
        second += np.diag(self.weights @ self.stds**2)
        return second - np.outer(mu, mu)


def gmm_sample(d, n, rng, return_components=False):
    comp = rng.choice(d.n_components, size=n, p=d.weights)
    x = d.means[comp] + d.stds[comp] * rng.standard_normal((n, d.dim))
    return (x, comp) if return_components else x


def gmm_logpdf(d, x):
    """Exact log-density. A 1-D mixture accepts scalars and (n,) arrays of points."""
    x = np.asarray(x, dtype=np.float64)
    if d.dim == 1 and x.ndim <= 1:
        single = x.ndim == 0
        x2 = x.reshape(-1, 1)
    else:
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
    diff = (x2[:, None, :] - d.means[None]) / d.stds[None]
    comp = (
        -0.5 * np.sum(diff**2, axis=2)
        - np.sum(np.log(d.stds), axis=1)[None]
        - 0.5 * d.dim * LOG_2PI
        + np.log(d.weights)[None]
    )
    out = logsumexp(comp, axis=1)
    return float(out[0]) if single else out


def two_mode_gmm(separation=4.0, std=1.0):
    """Symmetric 1-D mixture with modes at +-separation."""
    return GmmDensity([0.5, 0.5], [[-separation], [separation]], [[std], [std]])


# -- simple samplers ----------------------------------------------------------

def two_moons_sample(n, noise, rng, return_labels=False):
    """Two interleaved unit half-circles with isotropic Gaussian noise."""
    if noise < 0:
        raise ValueError("noise must be >= 0")
    labels = rng.integers(0, 2, size=n)
    t = rng.uniform(0.0, np.pi, size=n)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    x = np.where(labels[:, None] == 0, upper, lower)
    x = x + noise * rng.standard_normal((n, 2))
    return (x, labels) if return_labels else x


def moment_matched_normal(n, sigma, rng):
    """Zero-mean 1-D sample rescaled so that its second moment is exactly sigma^2.

    Linear models only see E[x^2], so full-batch gradients on this sample equal
    the population gradients under N(0, sigma^2).
    """
    x = rng.standard_normal((n, 1))
    x -= x.mean()
    return x * (sigma / np.sqrt(np.mean(x**2)))


# -- pairwise potentials ------------------------------------------------------

@dataclass
class PairwisePotential:
    """Sum of a pair term over all unordered particle pairs, already divided by tau."""

    kind: str
    n_particles: int
    space_dim: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("double_well", "lennard_jones"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.n_particles < 2:
            raise ValueError("need at least two particles")
        if self.params.get("tau", 1.0) <= 0:
            raise ValueError("tau must be positive")

    @property
    def dim(self):
        return self.n_particles * self.space_dim

    def pair_energy(self, d):
        p = self.params
        if self.kind == "double_well":
            r = d - p["d0"]
            return (p["a"] * r + p["b"] * r**2 + p["c"] * r**4) / (2.0 * p["tau"])
        s6 = (p["rm"] / d) ** 6
        return p["eps"] / (2.0 * p["tau"]) * (s6 * s6 - 2.0 * s6)

    def __call__(self, x):
        return potential_energy(self, x)


DW_DEFAULTS = {"a": 0.0, "b": -4.0, "c": 0.9, "d0": 4.0, "tau": 1.0}
LJ_DEFAULTS = {"rm": 1.0, "eps": 1.0, "tau": 1.0}

NAMED_POTENTIALS = {
    "dw4": ("double_well", 4, 2),
    "lj13": ("lennard_jones", 13, 3),
    "lj55": ("lennard_jones", 55, 3),
}


def double_well(n_particles=4, space_dim=2, **overrides):
    return PairwisePotential("double_well", n_particles, space_dim, {**DW_DEFAULTS, **overrides})


def lennard_jones(n_particles=13, space_dim=3, **overrides):
    return PairwisePotential("lennard_jones", n_particles, space_dim, {**LJ_DEFAULTS, **overrides})


def make_potential(name, **overrides):
    """Potential by name ("dw4", "lj13", "lj55") with parameter overrides."""
    try:
        kind, n, dim = NAMED_POTENTIALS[name]
    except KeyError:
        raise ValueError(f"unknown potential {name!r}; choose from {sorted(NAMED_POTENTIALS)}") from None
    defaults = DW_DEFAULTS if kind == "double_well" else LJ_DEFAULTS
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    return PairwisePotential(kind, n, dim, {**defaults, **overrides})


def pairwise_distances(p, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.dim:
        raise DimensionMismatch(f"configuration has {x.shape[-1]} coordinates, expected {p.dim}")
    pos = x.reshape(*x.shape[:-1], p.n_particles, p.space_dim)
    i, j = np.triu_indices(p.n_particles, k=1)
    return np.linalg.norm(pos[..., i, :] - pos[..., j, :], axis=-1)


def potential_energy(p, x):
    """Total energy u(x) of one configuration (N*n,) or a batch (B, N*n)."""
    d = pairwise_distances(p, x)
    if p.kind == "lennard_jones" and np.any(d == 0):
        raise DegenerateConfiguration("two particles coincide")
    e = p.pair_energy(d).sum(axis=-1)
    return float(e) if np.ndim(e) == 0 else e


class CenterOfMassBasis:
    """Orthonormal coordinates for the zero-center-of-mass subspace.

    ``lift`` maps (N-1)*n reduced coordinates to centered N*n configurations
    and ``reduce`` is its left inverse; both are isometries, so densities
    carry over without a Jacobian factor.
    """

    def __init__(self, n_particles, space_dim):
        self.n_particles = n_particles
        self.space_dim = space_dim
        helmert = np.zeros((n_particles, n_particles - 1))
        for j in range(1, n_particles):
            helmert[:j, j - 1] = 1.0
            helmert[j, j - 1] = -j
            helmert[:, j - 1] /= np.sqrt(j * (j + 1))
        self.matrix = np.kron(helmert, np.eye(space_dim))

    @property
    def reduced_dim(self):
        return self.matrix.shape[1]

    def lift(self, y):
        return np.asarray(y) @ self.matrix.T

    def reduce(self, x):
        return np.asarray(x) @ self.matrix

    def log_jacobian(self, y):
        return np.zeros(len(np.atleast_2d(y)))


class InternalFrame2D:
    """Translation- and rotation-free coordinates for planar particle systems.

    Particle 0 sits at the origin and particle 1 on the positive x-axis; the
    coordinates are log r01 followed by the positions of particles 2..N-1 in
    that frame, 2N - 3 numbers in all. Integrating out the frame angle and
    the position of particle 0 leaves the factor r01^2 (one from polar
    coordinates, one from the log), so a density exp(-u(x)) becomes
    exp(-u(lift(w)) + log_jacobian(w)) in these coordinates.
    """

    space_dim = 2

    def __init__(self, n_particles):
        if n_particles < 2:
            raise ValueError("need at least two particles")
        self.n_particles = n_particles

    @property
    def reduced_dim(self):
        return 2 * self.n_particles - 3

    def reduce(self, x):
        pos = np.atleast_2d(x).reshape(-1, self.n_particles, 2)
        rel = pos[:, 1:] - pos[:, :1]
        rho = np.linalg.norm(rel[:, 0], axis=1)
        if np.any(rho == 0):
            raise DegenerateConfiguration("particles 0 and 1 coincide; the frame is undefined")
        cos, sin = rel[:, 0, 0] / rho, rel[:, 0, 1] / rho
        rot = np.stack([np.stack([cos, sin], -1), np.stack([-sin, cos], -1)], 1)
        rest = np.einsum("bij,bkj->bki", rot, rel[:, 1:])
        return np.hstack([np.log(rho)[:, None], rest.reshape(len(pos), -1)])

    def lift(self, w):
        """Centered configuration in the canonical frame."""
        w = np.atleast_2d(w)
        pos = np.zeros((len(w), self.n_particles, 2))
        pos[:, 1, 0] = np.exp(w[:, 0])
        pos[:, 2:] = w[:, 1:].reshape(len(w), self.n_particles - 2, 2)
        return center(pos.reshape(len(w), -1), self.n_particles, 2)

    def log_jacobian(self, w):
        return 2.0 * np.atleast_2d(w)[:, 0]


COORDINATES = ("auto", "com", "internal")


@dataclass
class ParticleCoordinates:
    """Model coordinates for a particle system: a symmetry-reduced frame plus an affine standardization.

    ``energy`` is the potential in model coordinates, including the frame's
    Jacobian term; the constant Jacobian of the standardization is dropped,
    which only shifts the normalizer.
    """

    potential: PairwisePotential
    kind: str = "com"
    shift: np.ndarray = None
    scale: np.ndarray = None

    def __post_init__(self):
        if self.kind == "auto":
            self.kind = "internal" if self.potential.space_dim == 2 else "com"
        if self.kind not in ("com", "internal"):
            raise ValueError(f"coordinates must be one of {COORDINATES}")
        if self.kind == "internal" and self.potential.space_dim != 2:
            raise ValueError("internal coordinates are implemented for planar systems only")
        dim = self.frame.reduced_dim
        self.shift = np.zeros(dim) if self.shift is None else np.asarray(self.shift, dtype=np.float64)
        self.scale = np.ones(dim) if self.scale is None else np.asarray(self.scale, dtype=np.float64)
        if self.shift.shape != (dim,) or self.scale.shape != (dim,) or np.any(self.scale <= 0):
            raise ValueError("shift and scale must be length-dim vectors with positive scale")

    @property
    def frame(self):
        p = self.potential
        if self.kind == "internal":
            return InternalFrame2D(p.n_particles)
        return CenterOfMassBasis(p.n_particles, p.space_dim)

    @property
    def dim(self):
        return len(self.shift)

    @classmethod
    def fit(cls, potential, x, kind="auto", standardize=True):
        """Coordinates whose standardization matches the per-coordinate mean and std of ``x``."""
        pc = cls(potential, kind)
        if standardize:
            w = pc.frame.reduce(x)
            pc.shift, pc.scale = w.mean(axis=0), w.std(axis=0)
            if np.any(pc.scale == 0):
                raise ValueError("a coordinate has zero variance")
        return pc

    def to_model(self, x):
        return (self.frame.reduce(x) - self.shift) / self.scale

    def to_full(self, y):
        return self.frame.lift(np.atleast_2d(y) * self.scale + self.shift)

    def energy(self, y):
        w = np.atleast_2d(y) * self.scale + self.shift
        frame = self.frame
        return self.potential(frame.lift(w)) - frame.log_jacobian(w)

    def to_dict(self):
        p = self.potential
        return {"kind": self.kind, "potential": {"kind": p.kind, "n_particles": p.n_particles,
                                                  "space_dim": p.space_dim, "params": dict(p.params)},
                "shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, doc):
        p = doc["potential"]
        pot = PairwisePotential(p["kind"], p["n_particles"], p["space_dim"], p["params"])
        return cls(pot, doc["kind"], doc["shift"], doc["scale"])


def center(x, n_particles, space_dim):
    pos = np.asarray(x, dtype=np.float64).reshape(*np.shape(x)[:-1], n_particles, space_dim)
    pos = pos - pos.mean(axis=-2, keepdims=True)
    return pos.reshape(np.shape(x))


def random_symmetry(x, n_particles, space_dim, rng):
    """Apply a random orthogonal transform and particle permutation to each configuration.

    Pairwise-distance potentials are invariant under both, so this augments
    Boltzmann samples without changing their distribution.
    """
    x = np.atleast_2d(x)
    pos = x.reshape(len(x), n_particles, space_dim)
    q, r = np.linalg.qr(rng.standard_normal((len(x), space_dim, space_dim)))
    q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
    pos = np.einsum("bij,bpj->bpi", q, pos)
    perm = np.argsort(rng.random((len(x), n_particles)), axis=1)
    pos = np.take_along_axis(pos, perm[:, :, None], axis=1)
    return pos.reshape(x.shape)


# -- MCMC ---------------------------------------------------------------------

@dataclass
class McmcResult:
    samples: np.ndarray
    acceptance: float
    step_scale: float


def mcmc_sample(energy, n_samples, n_burnin, step_scale, rng, dim=None, n_chains=64,
                thin=10, tune=True, x0=None, target_acceptance=0.5):
    """Random-walk Metropolis targeting exp(-energy(x)), run as parallel chains.

    ``energy`` is a :class:`PairwisePotential` (configurations are kept
    mean-centered) or any callable on (B, dim) batches. The step size is tuned
    toward ``target_acceptance`` during burn-in only and then frozen.
    """
    if step_scale <= 0:
        raise ValueError("step_scale must be positive")
    particles = isinstance(energy, PairwisePotential)
    if particles:
        dim = energy.dim
    elif dim is None:
        raise ValueError("dim is required for a callable energy")
    if x0 is None:
        x = rng.standard_normal((n_chains, dim))
        if particles:
            x *= energy.params.get("d0", energy.params.get("rm", 1.0))
    else:
        x = np.array(np.broadcast_to(x0, (n_chains, dim)), dtype=np.float64)
    if particles:
        x = center(x, energy.n_particles, energy.space_dim)
    u = np.asarray(energy(x), dtype=np.float64)

    per_chain = -(-n_samples // n_chains)
    out = np.empty((per_chain, n_chains, dim))
    accepted = 0
    proposed = 0
    window = 0
    step = float(step_scale)
    total = n_burnin + per_chain * thin
    for it in range(total):
        noise = step * rng.standard_normal((n_chains, dim))
        if particles:
            noise = center(noise, energy.n_particles, energy.space_dim)
        prop = x + noise
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            u_prop = np.asarray(energy(prop), dtype=np.float64)
        log_ratio = u - u_prop
        accept = np.log(rng.random(n_chains)) < np.where(np.isfinite(log_ratio), log_ratio, -np.inf)
        x = np.where(accept[:, None], prop, x)
        u = np.where(accept, u_prop, u)
        if it < n_burnin:
            window += accept.sum()
            if tune and (it + 1) % 50 == 0:
                rate = window / (50 * n_chains)
                step *= np.exp(rate - target_acceptance)
                window = 0
        else:
            accepted += accept.sum()
            proposed += n_chains
            k = it - n_burnin
            if (k + 1) % thin == 0:
                out[k // thin] = x
    samples = out.reshape(-1, dim)[:n_samples]
    return McmcResult(samples, accepted / max(proposed, 1), step)


# -- conditional task ---------------------------------------------------------

@dataclass
class ConditionalTask:
    """theta ~ N(0, I_d), x_obs = theta + N(0, s^2 I_d)."""

    dim: int = 2
    noise_std: float = 1.0

    def __post_init__(self):
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")


def conditional_task_sample(task, n, rng):
    theta = rng.standard_normal((n, task.dim))
    x_obs = theta + task.noise_std * rng.standard_normal((n, task.dim))
    return theta, x_obs


def analytic_posterior(task, x_obs):
    s2 = task.noise_std**2
    mean = np.asarray(x_obs, dtype=np.float64) / (1.0 + s2)
    cov = s2 / (1.0 + s2) * np.eye(task.dim)
    return mean, cov


# -- CSV ----------------------------------------------------------------------

def write_csv(path, x, context=None):
    """One row per sample: data columns x0.. then context columns c0..; exact round-trip."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    header = [f"x{i}" for i in range(x.shape[1])]
    rows = x
    if context is not None:
        context = np.atleast_2d(np.asarray(context, dtype=np.float64))
        header += [f"c{i}" for i in range(context.shape[1])]
        rows = np.hstack([x, context])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows([[repr(float(v)) for v in row] for row in rows])


def read_csv(path):
    """Inverse of :func:`write_csv`; returns ``(x, context_or_None)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row], dtype=np.float64)
    data = data.reshape(-1, len(header))
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ccols = [i for i, h in enumerate(header) if h.startswith("c")]
    if len(xcols) + len(ccols) != len(header):
        raise ValueError(f"unrecognized columns in {path}: {header}")
    return data[:, xcols], (data[:, ccols] if ccols else None)


def with_params(p, **overrides):
    return replace(p, params={**p.params, **overrides})
