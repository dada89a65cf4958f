"""Optimization loop for encoder/decoder pairs: Adam, clipping, schedules, metrics, beta search."""
import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import NoStableBeta, NonFiniteLoss, SingularMatrix, TrainingDiverged
from .likelihood import ModelPair, log_likelihood_decoder, log_likelihood_encoder
from .linalg import ProbeKind, rng_stream
from .loss import LossConfig, exact_mle_loss_and_grads, fff_loss_and_grads

log = logging.getLogger(__name__)

SCHEDULES = ("constant", "exponential", "one_cycle")
# fff: trace surrogate + reconstruction; exact: plain maximum likelihood of the
# encoder; exact_recon: exact log-det + reconstruction (the loss the surrogate approximates)
OBJECTIVES = ("fff", "exact", "exact_recon")
METRICS_HEADER = ["step", "nll_surrogate", "nll_exact", "recon", "grad_theta", "grad_phi", "lr", "skipped"]

# stream keys under the master seed
_KEY_ENCODER, _KEY_DECODER, _KEY_SHUFFLE, _KEY_PROBES = 1, 2, 3, 4


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 256
    lr: float = 1e-3
    schedule: str = "constant"
    gamma: float = 1.0
    grad_clip: float = 0.0          # 0 disables clipping
    beta: float = 10.0
    k_probes: int = 1
    probe_kind: str = "gaussian"
    seed: int = 0
    eval_every: int = 100
    eval_points: int = 512
    objective: str = "fff"
    final_layer_scale: float = 0.0

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        ProbeKind(self.probe_kind)
        if min(self.steps, self.batch_size, self.eval_every, self.eval_points, self.k_probes) < 1:
            raise ValueError("steps, batch_size, eval_every, eval_points and k_probes must be >= 1")
        if not (self.lr > 0 and self.beta > 0):
            raise ValueError("lr and beta must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.grad_clip < 0 or self.final_layer_scale < 0:
            raise ValueError("grad_clip and final_layer_scale must be >= 0")

    def loss_config(self):
        return LossConfig(beta=self.beta, k_probes=self.k_probes, probe_kind=self.probe_kind)


@dataclass
class Dataset:
    x: np.ndarray
    c: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        if self.c is not None:
            self.c = np.atleast_2d(np.asarray(self.c, dtype=np.float64))
            if len(self.c) != len(self.x):
                raise ValueError("context rows do not match data rows")

    def __len__(self):
        return len(self.x)

    @property
    def dim(self):
        return self.x.shape[1]

    def subset(self, idx):
        return Dataset(self.x[idx], None if self.c is None else self.c[idx], self.name)


@dataclass
class MetricsRow:
    step: int
    nll_surrogate: float
    nll_exact: float
    recon: float
    grad_theta: float
    grad_phi: float
    lr: float
    skipped: int

    def as_list(self):
        return [getattr(self, k) for k in METRICS_HEADER]


@dataclass
class TrainResult:
    encoder: nn.ParamStore
    decoder: nn.ParamStore | None
    metrics: list = field(default_factory=list)
    skipped: int = 0

    @property
    def model(self):
        return ModelPair(self.encoder, self.decoder)


# -- optimizer pieces ---------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, params):
        flat = params.flat if isinstance(params, nn.ParamStore) else np.asarray(params)
        return cls(np.zeros_like(flat), np.zeros_like(flat))


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, in place on ``params`` (array or ParamStore)."""
    p = params.flat if isinstance(params, nn.ParamStore) else params
    g = grads.flat if isinstance(grads, nn.ParamStore) else np.asarray(grads)
    if p.shape != g.shape:
        raise ValueError("parameter and gradient shapes differ")
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * g
    state.v *= beta2
    state.v += (1.0 - beta2) * g * g
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def clip_global_norm(grads, max_norm):
    """Scale the gradient(s) in place so their joint L2 norm is at most ``max_norm``.

    ``grads`` is an array, a ParamStore, or a list of those. Returns the norm
    before clipping.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    items = grads if isinstance(grads, (list, tuple)) else [grads]
    arrays = [g.flat if isinstance(g, nn.ParamStore) else g for g in items]
    norm = math.sqrt(sum(float(np.dot(a, a)) for a in arrays))
    if norm > max_norm:
        scale = max_norm / norm
        for a in arrays:
            a *= scale
    return norm


def learning_rate(cfg, step):
    """Learning rate at 0-based ``step``.

    one_cycle warms up linearly from lr/25 to lr over the first 30% of steps,
    then follows a cosine down to lr/25.
    """
    if cfg.schedule == "constant":
        return cfg.lr
    if cfg.schedule == "exponential":
        return cfg.lr * cfg.gamma**step
    low = cfg.lr / 25.0
    warm = max(1, int(round(0.3 * cfg.steps)))
    if step < warm:
        return low + (cfg.lr - low) * step / warm
    frac = (step - warm) / max(1, cfg.steps - 1 - warm)
    return low + 0.5 * (cfg.lr - low) * (1.0 + math.cos(math.pi * min(frac, 1.0)))


# -- training -----------------------------------------------------------------

def evaluate_nll(encoder, decoder, data, objective="fff"):
    """Mean exact NLL in nats; decoder-side when a decoder exists, encoder-side otherwise."""
    try:
        if decoder is None:
            ll = log_likelihood_encoder(encoder, data.x, data.c)
        else:
            ll = log_likelihood_decoder(ModelPair(encoder, decoder), data.x, data.c)
    except SingularMatrix:
        return float("nan")
    return float(-np.mean(ll))


def _batches(n, batch_size, rng):
    if batch_size >= n:
        return [np.arange(n)]
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n - batch_size + 1, batch_size)]


def train(cfg, encoder_spec, decoder_spec, data, eval_data=None, encoder=None, decoder=None,
          callback=None):
    """Train an encoder (and decoder, for the FFF objective) on ``data``.

    Writes one :class:`MetricsRow` every ``eval_every`` steps (and at the last
    step) with window means of the training terms and the exact NLL on
    ``eval_data`` (default: the first ``eval_points`` training rows). Batches
    with non-finite loss are skipped; more than half skipped within an epoch
    raises :class:`TrainingDiverged`.
    """
    if data.dim != encoder_spec.input_dim:
        raise ValueError(f"data has dim {data.dim}, encoder expects {encoder_spec.input_dim}")
    if (data.c is None) != (encoder_spec.context_dim == 0):
        raise ValueError("context presence does not match the encoder spec")
    has_decoder = cfg.objective != "exact"
    if encoder is None:
        encoder = nn.init_params(encoder_spec, rng_stream(cfg.seed, _KEY_ENCODER).integers(2**63),
                                 cfg.final_layer_scale if encoder_spec.global_skip else None)
    if has_decoder and decoder is None:
        decoder = nn.init_params(decoder_spec, rng_stream(cfg.seed, _KEY_DECODER).integers(2**63),
                                 cfg.final_layer_scale if decoder_spec.global_skip else None)
    if not has_decoder:
        decoder = None
    if eval_data is None:
        eval_data = data.subset(slice(0, min(cfg.eval_points, len(data))))
    elif len(eval_data) > cfg.eval_points:
        eval_data = eval_data.subset(slice(0, cfg.eval_points))

    loss_cfg = cfg.loss_config()
    opt_theta = AdamState.like(encoder)
    opt_phi = AdamState.like(decoder) if has_decoder else None
    shuffle_rng = rng_stream(cfg.seed, _KEY_SHUFFLE)

    result = TrainResult(encoder, decoder)
    window = {"nll": [], "recon": [], "gt": [], "gp": []}
    skipped_window = 0
    step = 0
    epoch_batches = 0
    epoch_skipped = 0
    batches = []
    while step < cfg.steps:
        if not batches:
            if epoch_batches and epoch_skipped * 2 > epoch_batches:
                raise TrainingDiverged(
                    f"{epoch_skipped}/{epoch_batches} batches non-finite in one epoch; "
                    "lower the learning rate or raise beta"
                )
            batches = _batches(len(data), cfg.batch_size, shuffle_rng)
            epoch_batches = len(batches)
            epoch_skipped = 0
        idx = batches.pop(0)
        xb = data.x[idx]
        cb = None if data.c is None else data.c[idx]
        lr = learning_rate(cfg, step)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                if cfg.objective == "fff":
                    out = fff_loss_and_grads(xb, encoder, decoder, loss_cfg,
                                             rng_stream(cfg.seed, _KEY_PROBES, step), c=cb)
                elif cfg.objective == "exact_recon":
                    out = exact_mle_loss_and_grads(xb, encoder, c=cb, beta=cfg.beta, decoder=decoder)
                else:
                    out = exact_mle_loss_and_grads(xb, encoder, c=cb)
        except (NonFiniteLoss, SingularMatrix) as exc:
            log.warning("step %d skipped: %s", step, exc)
            skipped_window += 1
            epoch_skipped += 1
            result.skipped += 1
        else:
            grads = [out.grad_theta] + ([out.grad_phi] if has_decoder else [])
            gt = float(np.linalg.norm(out.grad_theta.flat))
            gp = float(np.linalg.norm(out.grad_phi.flat)) if has_decoder else 0.0
            if cfg.grad_clip > 0:
                clip_global_norm(grads, cfg.grad_clip)
            adam_step(encoder, out.grad_theta, opt_theta, lr)
            if has_decoder:
                adam_step(decoder, out.grad_phi, opt_phi, lr)
            window["nll"].append(out.nll_surrogate)
            window["recon"].append(out.recon)
            window["gt"].append(gt)
            window["gp"].append(gp)
        step += 1
        if step % cfg.eval_every == 0 or step == cfg.steps:
            mean = lambda k: float(np.mean(window[k])) if window[k] else float("nan")
            row = MetricsRow(
                step=step,
                nll_surrogate=mean("nll"),
                nll_exact=evaluate_nll(encoder, decoder, eval_data, cfg.objective),
                recon=mean("recon"),
                grad_theta=mean("gt"),
                grad_phi=mean("gp"),
                lr=lr,
                skipped=skipped_window,
            )
            result.metrics.append(row)
            log.info("step %d nll %.4f exact %.4f recon %.3g", step, row.nll_surrogate, row.nll_exact, row.recon)
            if callback is not None:
                callback(row)
            window = {k: [] for k in window}
            skipped_window = 0
    return result


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row.as_list()])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            MetricsRow(**{k: (int(v) if k in ("step", "skipped") else float(v)) for k, v in r.items()})
            for r in reader
        ]


# -- beta search --------------------------------------------------------------

@dataclass
class BetaTrial:
    beta: float
    stable: bool
    nll_trace: list
    recon_trace: list
    reason: str = ""


@dataclass
class BetaSearchResult:
    beta: float
    trials: list


def classify_trace(nll_trace, threshold=5.0):
    """Return (stable, reason) for a sequence of exact-NLL evaluations."""
    trace = np.asarray(nll_trace, dtype=np.float64)
    if trace.size == 0 or not np.all(np.isfinite(trace)):
        return False, "non-finite NLL"
    jumps = np.abs(np.diff(trace))
    if jumps.size and jumps.max() > threshold:
        return False, f"NLL jumped by {jumps.max():.2f} nats"
    return True, ""


def probe_beta(cfg, encoder_spec, decoder_spec, data, beta, steps=None, threshold=5.0, eval_data=None):
    """Short training run at ``beta``; classifies the exact-NLL trace as stable or not."""
    if steps is None:
        steps = min(cfg.steps, max(1, math.ceil(len(data) / cfg.batch_size)))
    eval_every = max(1, steps // 10)
    probe_cfg = TrainConfig(**{**cfg.__dict__, "beta": beta, "steps": steps, "eval_every": eval_every})
    try:
        res = train(probe_cfg, encoder_spec, decoder_spec, data, eval_data=eval_data)
    except TrainingDiverged as exc:
        return BetaTrial(beta, False, [], [], str(exc))
    nll = [r.nll_exact for r in res.metrics]
    recon = [r.recon for r in res.metrics]
    stable, reason = classify_trace(nll, threshold)
    return BetaTrial(beta, stable, nll, recon, reason)


def beta_search(cfg, encoder_spec, decoder_spec, data, factor=10.0, max_rounds=6, steps=None,
                threshold=5.0, eval_data=None):
    """Exponential search for the smallest beta whose first-epoch NLL trace is stable.

    Starts at ``cfg.beta``; moves up by ``factor`` while unstable, or down while
    stable, and returns the smallest stable value seen.
    """
    trials = []
    beta = cfg.beta
    first = probe_beta(cfg, encoder_spec, decoder_spec, data, beta, steps, threshold, eval_data)
    trials.append(first)
    direction = 1.0 / factor if first.stable else factor
    for _ in range(max_rounds - 1):
        beta = beta * direction
        trial = probe_beta(cfg, encoder_spec, decoder_spec, data, beta, steps, threshold, eval_data)
        trials.append(trial)
        if trial.stable != first.stable:
            break
    stable = [t.beta for t in trials if t.stable]
    if not stable:
        raise NoStableBeta(f"no stable beta among {[t.beta for t in trials]}")
    return BetaSearchResult(min(stable), trials)
