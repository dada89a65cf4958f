"""Free-form flow objective, exact maximum-likelihood reference, and gradient-gap diagnostics.

Per sample the FFF loss is

    0.5 |f(x)|^2 + (D/2) log 2pi - v^T J_f(x) SG(J_g(f(x)) v) + beta |g(f(x)) - x|^2

whose encoder gradient estimates the exact maximum-likelihood gradient when
the decoder is close to the inverse of the encoder. The reconstruction term
carries no 1/2 factor; beta absorbs it.
"""
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionMismatch, NonFiniteLoss
from .linalg import ProbeKind, inverse, log_abs_det, sample_probe

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class LossConfig:
    beta: float = 10.0
    k_probes: int = 1
    probe_kind: ProbeKind = ProbeKind.GAUSSIAN

    def __post_init__(self):
        self.probe_kind = ProbeKind(self.probe_kind)
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.k_probes < 1:
            raise ValueError("k_probes must be >= 1")


@dataclass
class LossBreakdown:
    """Batch-mean loss terms and parameter gradients of ``total``.

    ``nll_surrogate`` includes the (D/2) log 2pi constant. For the exact
    reference loss ``surrogate`` holds the mean log|det J|, and ``recon`` is 0
    unless a decoder is trained alongside.
    """

    nll_surrogate: float
    surrogate: float
    recon: float
    total: float
    grad_theta: nn.ParamStore
    grad_phi: nn.ParamStore | None

    def values(self):
        return (self.nll_surrogate, self.surrogate, self.recon, self.total)


def beta_from_sigma(sigma):
    """Reconstruction weight equivalent to a Gaussian decoder noise sigma: 1 / (2 sigma^2)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return 1.0 / (2.0 * sigma**2)


def sigma_from_beta(beta):
    if not beta > 0:
        raise ValueError("beta must be positive")
    return float(np.sqrt(1.0 / (2.0 * beta)))


def _check_finite(breakdown):
    parts = [np.array(breakdown.values()), breakdown.grad_theta.flat]
    if breakdown.grad_phi is not None:
        parts.append(breakdown.grad_phi.flat)
    if not all(np.all(np.isfinite(p)) for p in parts):
        raise NonFiniteLoss(
            "loss or gradient is not finite; lower the learning rate or raise beta"
        )
    return breakdown


def _batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionMismatch(f"expected a non-empty (B, D) batch, got {x.shape}")
    return x


def fff_loss_and_grads(x, encoder, decoder, cfg, rng=None, c=None, probes=None):
    """FFF loss with encoder and decoder gradients for one batch.

    ``probes`` optionally fixes the probe vectors: shape (K, D) to share one
    set across the batch, or (K, B, D). Otherwise K probes per sample are
    drawn from ``rng`` according to ``cfg``.

    The decoder JVP ``J_g v`` is treated as a constant, so the surrogate only
    reaches the encoder; the decoder is trained by the reconstruction term alone.
    """
    x = _batch(x)
    batch, dim = x.shape
    if probes is None:
        probes = sample_probe(dim, cfg.probe_kind, rng, size=(cfg.k_probes, batch))
    else:
        probes = np.asarray(probes, dtype=np.float64)
        if probes.ndim == 2:
            probes = np.broadcast_to(probes[:, None, :], (probes.shape[0], batch, dim))
    k = probes.shape[0]
    if probes.shape != (k, batch, dim):
        raise DimensionMismatch(f"probes have shape {probes.shape}")
    v = probes.reshape(k * batch, dim)
    cr = None if c is None else np.tile(np.asarray(c, dtype=np.float64), (k, 1))

    z = nn.forward(encoder, x, c)
    x_hat_k, v2, _ = nn.jvp(decoder, np.tile(z, (k, 1)), v, cr)
    x_hat = x_hat_k[:batch]

    # dual pass of f along the frozen decoder JVP: t = J_f v2
    _, t, tape = nn.jvp(encoder, np.tile(x, (k, 1)), v2, cr)
    surrogate = float(np.sum(v * t) / (k * batch))

    resid = x_hat - x
    recon = float(np.sum(resid * resid) / batch)
    latent = float(0.5 * np.sum(z * z) / batch)
    nll = latent + 0.5 * dim * LOG_2PI - surrogate

    grad_phi = decoder.zeros_like()
    _, u_z = nn.vjp(decoder, z, (2.0 * cfg.beta / batch) * resid, c, grads=grad_phi)

    grad_theta = encoder.zeros_like()
    u_y = np.tile((z / batch + u_z) / k, (k, 1))
    nn.dual_backward(encoder, tape, u_y, -v / (k * batch), grads=grad_theta)

    return _check_finite(
        LossBreakdown(nll, surrogate, recon, nll + cfg.beta * recon, grad_theta, grad_phi)
    )


def exact_mle_loss_and_grads(x, encoder, c=None, beta=None, decoder=None):
    """Exact negative log-likelihood of the encoder flow and its gradient.

    The log-determinant gradient uses Jacobi's formula, tr(dJ J^-1), assembled
    from D dual passes with tangents equal to the columns of J^-1.

    Without ``decoder`` this is plain maximum likelihood and ``beta`` is
    ignored. With a decoder, ``beta |g(f(x)) - x|^2`` is added and both
    networks get gradients: the exact-log-det counterpart of the FFF loss.
    """
    x = _batch(x)
    batch, dim = x.shape
    jac = nn.full_jacobian(encoder, x, c)
    logdet = log_abs_det(jac)
    jinv = inverse(jac)

    z = nn.forward(encoder, x, c)
    latent = float(0.5 * np.sum(z * z) / batch)
    mean_logdet = float(np.mean(logdet))
    nll = latent + 0.5 * dim * LOG_2PI - mean_logdet

    u_y = z / batch
    recon, total, grad_phi = 0.0, nll, None
    if decoder is not None:
        if beta is None or not beta > 0:
            raise ValueError("beta must be positive when a decoder is trained")
        resid = nn.forward(decoder, z, c) - x
        recon = float(np.sum(resid * resid) / batch)
        total = nll + beta * recon
        grad_phi = decoder.zeros_like()
        _, u_z = nn.vjp(decoder, z, (2.0 * beta / batch) * resid, c, grads=grad_phi)
        u_y = u_y + u_z

    # row b*D + i carries tangent J^-1 e_i and cotangent -e_i on the tangent output
    w = jinv.transpose(0, 2, 1).reshape(batch * dim, dim)
    u_t = -np.tile(np.eye(dim), (batch, 1)) / batch
    cr = None if c is None else np.repeat(np.asarray(c, dtype=np.float64), dim, axis=0)
    _, _, tape = nn.jvp(encoder, np.repeat(x, dim, axis=0), w, cr)
    grad_theta = encoder.zeros_like()
    nn.dual_backward(encoder, tape, np.repeat(u_y, dim, axis=0) / dim, u_t, grads=grad_theta)

    return _check_finite(LossBreakdown(nll, mean_logdet, recon, total, grad_theta, grad_phi))


def jacobian_param_derivative(params, x, c=None):
    """dJ/dtheta at a single point, shape (P, D, D) with entry [p, a, b] = d J[a, b] / d theta_p."""
    x = np.asarray(x, dtype=np.float64)
    dim = params.spec.input_dim
    eye = np.eye(dim)
    out = np.zeros((params.size, dim, dim))
    for b in range(dim):
        _, _, tape = nn.jvp(params, x[None], eye[b][None], None if c is None else np.atleast_2d(c))
        for a in range(dim):
            g = params.zeros_like()
            nn.dual_backward(params, tape, np.zeros((1, dim)), eye[a][None], grads=g)
            out[:, a, b] = g.flat
    return out


def surrogate_exactness_gap(encoder, decoder, x, c=None, directions=None):
    """Per-direction error of the trace surrogate and its Frobenius bound at one point.

    For each parameter direction d (coordinate axes unless ``directions`` is
    given as a (n, P) array):

        gap   = | tr(dJ_f J_g) - d log|det J_f| |
        bound = ||dJ_f J_f^-1||_F * ||J_f J_g - I||_F

    Returns ``(gaps, bounds)`` arrays; the bound holds direction by direction.
    """
    x = np.asarray(x, dtype=np.float64)
    dim = x.shape[-1]
    jf = nn.full_jacobian(encoder, x, c)
    jg = nn.full_jacobian(decoder, nn.forward(encoder, x, c), c)
    jf_inv = inverse(jf)
    djac = jacobian_param_derivative(encoder, x, c)
    if directions is not None:
        djac = np.einsum("np,pab->nab", np.atleast_2d(directions), djac)
    approx = np.einsum("nab,ba->n", djac, jg)
    exact = np.einsum("nab,ba->n", djac, jf_inv)
    left = np.linalg.norm(djac @ jf_inv, axis=(1, 2))
    deviation = np.linalg.norm(jf @ jg - np.eye(dim))
    return np.abs(approx - exact), left * deviation


def gradient_gap_bound(encoder, decoder, xs, c=None):
    """Batch-level gradient difference between the surrogate and exact log-det terms.

    Returns ``(diff, bound)`` per parameter coordinate where ``diff`` is the
    absolute difference of batch-mean gradients and ``bound`` is
    sqrt(mean ||dJ J^-1||_F^2) * sqrt(mean ||J_f J_g - I||_F^2).
    """
    xs = _batch(xs)
    dim = xs.shape[1]
    diffs, lefts, devs = [], [], []
    for i, x in enumerate(xs):
        ci = None if c is None else c[i]
        jf = nn.full_jacobian(encoder, x, ci)
        jg = nn.full_jacobian(decoder, nn.forward(encoder, x, ci), ci)
        jf_inv = inverse(jf)
        djac = jacobian_param_derivative(encoder, x, ci)
        diffs.append(np.einsum("nab,ba->n", djac, jg - jf_inv))
        lefts.append(np.linalg.norm(djac @ jf_inv, axis=(1, 2)) ** 2)
        devs.append(np.linalg.norm(jf @ jg - np.eye(dim)) ** 2)
    diff = np.abs(np.mean(diffs, axis=0))
    bound = np.sqrt(np.mean(lefts, axis=0)) * np.sqrt(np.mean(devs))
    return diff, bound
