"""Sampling, exact likelihoods, reconstruction diagnostics and importance reweighting."""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import nn
from .errors import DimensionMismatch, SingularMatrix
from .linalg import log_abs_det

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ModelPair:
    encoder: nn.ParamStore
    decoder: nn.ParamStore | None = None

    def __post_init__(self):
        if self.decoder is not None and self.decoder.spec.input_dim != self.encoder.spec.input_dim:
            raise DimensionMismatch("encoder and decoder dimensions differ")

    @property
    def dim(self):
        return self.encoder.spec.input_dim


@dataclass
class WeightedSamples:
    x: np.ndarray
    log_p_model: np.ndarray
    log_weight: np.ndarray | None = None


def _log_normal(z):
    return -0.5 * np.sum(z * z, axis=-1) - 0.5 * z.shape[-1] * LOG_2PI


def _logdet(jac, offset=0):
    try:
        return log_abs_det(jac)
    except SingularMatrix as exc:
        raise SingularMatrix("Jacobian is singular", index=None if exc.index is None else offset + exc.index) from None


def _chunks(n, size):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def sample(model, n, rng, c=None, return_latent=False):
    """Draw ``n`` samples x = g(z) with z ~ N(0, I)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = rng.standard_normal((n, model.dim))
    x = nn.forward(model.decoder, z, c)
    return (x, z) if return_latent else x


def decoder_log_density_at_latent(model, z, c=None, chunk=2048):
    """log density of the decoder pushforward at x = g(z), using the generating z itself."""
    z = np.atleast_2d(z)
    out = np.empty(len(z))
    for s in _chunks(len(z), chunk):
        cs = None if c is None else (c if np.ndim(c) == 1 else c[s])
        jac = nn.full_jacobian(model.decoder, z[s], cs)
        out[s] = _log_normal(z[s]) - _logdet(jac, s.start)
    return out


def log_likelihood_decoder(model, x, c=None, chunk=2048):
    """Decoder-side log-likelihood with the encoder standing in for g^-1.

    log p(x) ~= log N(f(x)) - log|det J_g(f(x))|, in nats, constant included.
    Returns a float for a single point and an array for a batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    out = np.empty(len(x2))
    for s in _chunks(len(x2), chunk):
        cs = None if c is None else (c if np.ndim(c) == 1 else c[s])
        z = nn.forward(model.encoder, x2[s], cs)
        jac = nn.full_jacobian(model.decoder, z, cs)
        out[s] = _log_normal(z) - _logdet(jac, s.start)
    return float(out[0]) if single else out


def log_likelihood_encoder(model, x, c=None, chunk=2048):
    """Encoder-side change of variables: log N(f(x)) + log|det J_f(x)|."""
    encoder = model.encoder if isinstance(model, ModelPair) else model
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    out = np.empty(len(x2))
    for s in _chunks(len(x2), chunk):
        cs = None if c is None else (c if np.ndim(c) == 1 else c[s])
        z = nn.forward(encoder, x2[s], cs)
        jac = nn.full_jacobian(encoder, x2[s], cs)
        out[s] = _log_normal(z) + _logdet(jac, s.start)
    return float(out[0]) if single else out


def reconstruction_report(model, x, energy=None, c=None):
    """Mean reconstruction distance, mean energy change, and mean ||J_f J_g - I||_F / D."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if len(x) == 0:
        raise ValueError("empty batch")
    z = nn.forward(model.encoder, x, c)
    x_hat = nn.forward(model.decoder, z, c)
    jf = nn.full_jacobian(model.encoder, x, c)
    jg = nn.full_jacobian(model.decoder, z, c)
    dim = x.shape[1]
    deviation = np.linalg.norm(jf @ jg - np.eye(dim), axis=(1, 2)) / dim
    report = {
        "mean_distance": float(np.mean(np.linalg.norm(x_hat - x, axis=1))),
        "mean_squared_error": float(np.mean(np.sum((x_hat - x) ** 2, axis=1))),
        "jacobian_deviation": float(np.mean(deviation)),
    }
    if energy is not None:
        report["mean_energy_difference"] = float(np.mean(np.abs(energy(x) - energy(x_hat))))
    return report


def importance_weights(model, samples, energy, temperature=1.0, log_density=None):
    """Unnormalized log importance weights -u(x)/T - log p_model(x).

    ``log_density`` defaults to :func:`log_likelihood_decoder`; pass the
    latent-side density from :func:`sample_weighted` when the samples came
    from the model.
    """
    samples = np.atleast_2d(samples)
    if log_density is None:
        log_density = log_likelihood_decoder(model, samples)
    return -np.asarray(energy(samples)) / temperature - log_density


def sample_weighted(model, n, rng, energy, temperature=1.0):
    """Sample from the model and attach log densities and importance weights."""
    x, z = sample(model, n, rng, return_latent=True)
    log_p = decoder_log_density_at_latent(model, z)
    log_w = importance_weights(model, x, energy, temperature, log_density=log_p)
    return WeightedSamples(x, log_p, log_w)


def normalized_weights(log_w):
    log_w = np.asarray(log_w, dtype=np.float64)
    return np.exp(log_w - logsumexp(log_w))


def effective_sample_size(log_w):
    """(sum w)^2 / sum w^2, computed stably from log weights."""
    log_w = np.asarray(log_w, dtype=np.float64)
    return float(np.exp(2.0 * logsumexp(log_w) - logsumexp(2.0 * log_w)))


def self_normalized_mean(log_w, values):
    """Self-normalized importance estimate of E[values] and its delta-method standard error."""
    w = normalized_weights(log_w)
    values = np.asarray(values, dtype=np.float64)
    mean = float(np.sum(w * values))
    se = float(np.sqrt(np.sum(w**2 * (values - mean) ** 2)))
    return mean, se
