"""Command-line entry point.

Subcommands: train, sample, nll, data, verify, landscape, beta-search, reweight.
Exit codes: 0 success, 1 verification or quality failure, 2 usage or config
error, 3 numerical failure.
"""
import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, checkpoint, config, datasets, likelihood, nn, plotting, train, verify
from .errors import (ConfigError, DegenerateConfiguration, FFFError, NoStableBeta, NonFiniteLoss,
                     SingularMatrix, TrainingDiverged)
from .linalg import rng_stream

log = logging.getLogger("fff")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3
NUMERICAL_ERRORS = (SingularMatrix, NonFiniteLoss, TrainingDiverged, NoStableBeta, DegenerateConfiguration,
                    FloatingPointError)

_DATA_KEY = 100


# -- datasets and models from a RunConfig -------------------------------------

def _dataset_id(name, x):
    return f"{name}:{hashlib.sha256(np.ascontiguousarray(x).tobytes()).hexdigest()[:16]}"


def make_dataset(cfg):
    """Return ``(train_data, eval_data_or_None, coordinates)`` for a RunConfig.

    ``coordinates`` is None, or a dict describing the center-of-mass-free
    basis used for particle systems.
    """
    name = cfg.dataset
    n, n_eval = cfg.n_data, cfg.n_eval
    seed = cfg.resolved_data_seed
    coords = None
    c = None
    if name not in config.DATASETS:
        x, c = datasets.read_csv(name)
        data = train.Dataset(x, c, _dataset_id(os.path.basename(name), x))
        ev = None
        if cfg.eval_dataset:
            ex, ec = datasets.read_csv(cfg.eval_dataset)
            ev = train.Dataset(ex, ec, _dataset_id(os.path.basename(cfg.eval_dataset), ex))
        return data, ev, None
    rng = rng_stream(seed, _DATA_KEY, config.DATASETS.index(name))
    if name == "two_moons":
        x = datasets.two_moons_sample(n + n_eval, cfg.noise, rng)
    elif name == "gmm2":
        x = datasets.gmm_sample(datasets.two_mode_gmm(cfg.separation), n + n_eval, rng)
    elif name == "normal":
        x = np.vstack([datasets.moment_matched_normal(n, cfg.sigma, rng),
                       datasets.moment_matched_normal(max(n_eval, 2), cfg.sigma, rng)[:n_eval]])
    elif name == "conditional":
        task = datasets.ConditionalTask(cfg.cond_dim, cfg.cond_noise)
        x, c = datasets.conditional_task_sample(task, n + n_eval, rng)
    else:
        pot = datasets.make_potential(name, **cfg.potential_overrides())
        res = datasets.mcmc_sample(pot, n + n_eval, cfg.mcmc_burnin, cfg.mcmc_step, rng, thin=cfg.mcmc_thin)
        log.info("MCMC acceptance %.3f, step %.4f", res.acceptance, res.step_scale)
        full = res.samples
        if cfg.augment:
            full = datasets.random_symmetry(full, pot.n_particles, pot.space_dim, rng)
        try:
            pc = datasets.ParticleCoordinates.fit(pot, full[:n], cfg.coordinates, cfg.standardize)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        x = pc.to_model(full)
        coords = pc.to_dict()
    data = train.Dataset(x[:n], None if c is None else c[:n], _dataset_id(name, x[:n]))
    ev = None
    if n_eval:
        ev = train.Dataset(x[n:], None if c is None else c[n:], _dataset_id(name, x[n:]))
    return data, ev, coords


def make_specs(cfg, dim, context_dim):
    if cfg.model == "linear":
        if context_dim:
            raise ConfigError("the linear model takes no context")
        spec = nn.linear_spec(dim, bias=False)
        return spec, spec
    spec = nn.NetworkSpec(dim, context_dim, cfg.hidden, cfg.activation, cfg.global_skip,
                          cfg.context_every_layer)
    return spec, spec


def _particle_coordinates(meta):
    doc = meta.get("coordinates")
    return None if not doc else datasets.ParticleCoordinates.from_dict(doc)


# -- output helpers -----------------------------------------------------------

def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _prepare_out(path):
    os.makedirs(path, exist_ok=True)
    return path


def write_manifest(out_dir, command, cfg_dict, seed, started, outputs, extra=None):
    doc = {
        "command": command,
        "config": cfg_dict,
        "seed": seed,
        "version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": outputs,
    }
    if extra:
        doc.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    checkpoint.atomic_write_text(path, json.dumps(doc, indent=1) + "\n")
    return path


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float | np.floating) else v for v in row])


# -- commands -----------------------------------------------------------------

def _run_config(args):
    overrides = {k: config.parse_value(k, v) for k, v in vars(args).items()
                 if k in config.FIELD_TYPES and k not in ("threads", "out_dir")}
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.threads is not None:
        overrides["threads"] = args.threads
    return config.build(args.config, overrides)


def _init_models(cfg, enc_spec, dec_spec):
    if not cfg.init_checkpoint:
        return None, None
    model, _ = checkpoint.load(cfg.init_checkpoint)
    if model.encoder.spec != enc_spec:
        raise ConfigError("init_checkpoint encoder spec does not match the configured model")
    if model.decoder is not None and model.decoder.spec != dec_spec:
        raise ConfigError("init_checkpoint decoder spec does not match the configured model")
    return model.encoder, model.decoder


def cmd_train(args):
    started = _now()
    cfg = _run_config(args)
    out = _prepare_out(cfg.resolved_out_dir("train"))
    with threadpool_limits(cfg.threads):
        data, ev, coords = make_dataset(cfg)
        enc_spec, dec_spec = make_specs(cfg, data.dim, 0 if data.c is None else data.c.shape[1])
        enc, dec = _init_models(cfg, enc_spec, dec_spec)
        result = train.train(cfg.train_config(), enc_spec, dec_spec, data, eval_data=ev,
                             encoder=enc, decoder=dec)
    ckpt = os.path.join(out, "checkpoint.json")
    metrics = os.path.join(out, "metrics.csv")
    meta = {"seed": cfg.seed, "beta": cfg.beta, "step": cfg.steps, "dataset_id": data.name,
            "objective": cfg.objective, "coordinates": coords}
    checkpoint.save(ckpt, result.model, meta)
    train.write_metrics_csv(metrics, result.metrics)
    cfg_path = os.path.join(out, "config.cfg")
    checkpoint.atomic_write_text(cfg_path, cfg.to_text())
    last = result.metrics[-1]
    write_manifest(out, "train", cfg.to_dict(), cfg.seed, started,
                   {"checkpoint": ckpt, "metrics": metrics, "config": cfg_path},
                   {"final": dataclasses.asdict(last), "skipped": result.skipped})
    print(f"step={last.step} nll_exact={last.nll_exact:.6f} recon={last.recon:.3e} -> {out}")
    return EXIT_OK


def cmd_beta_search(args):
    started = _now()
    cfg = _run_config(args)
    out = _prepare_out(cfg.resolved_out_dir("beta-search"))
    with threadpool_limits(cfg.threads):
        data, ev, _ = make_dataset(cfg)
        enc_spec, dec_spec = make_specs(cfg, data.dim, 0 if data.c is None else data.c.shape[1])
        try:
            res = train.beta_search(cfg.train_config(), enc_spec, dec_spec, data, cfg.beta_factor,
                                    cfg.beta_rounds, cfg.beta_steps or None, cfg.beta_threshold, ev)
            chosen = res.beta
            trials = res.trials
        except NoStableBeta as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            write_manifest(out, "beta-search", cfg.to_dict(), cfg.seed, started, {}, {"beta": None})
            return EXIT_NUMERICAL
    path = os.path.join(out, "beta_search.csv")
    _write_rows(path, ["beta", "stable", "final_nll", "max_jump", "reason"], [
        (float(t.beta), int(t.stable), float(t.nll_trace[-1]) if t.nll_trace else float("nan"),
         float(np.max(np.abs(np.diff(t.nll_trace)))) if len(t.nll_trace) > 1 else 0.0, t.reason)
        for t in trials
    ])
    write_manifest(out, "beta-search", cfg.to_dict(), cfg.seed, started, {"trials": path}, {"beta": chosen})
    print(f"beta={chosen!r}")
    return EXIT_OK


def cmd_data(args):
    started = _now()
    cfg = _run_config(args)
    out = _prepare_out(cfg.resolved_out_dir("data"))
    with threadpool_limits(cfg.threads):
        data, ev, coords = make_dataset(cfg)
    paths = {"data": os.path.join(out, "data.csv")}
    datasets.write_csv(paths["data"], data.x, data.c)
    if ev is not None:
        paths["eval"] = os.path.join(out, "eval.csv")
        datasets.write_csv(paths["eval"], ev.x, ev.c)
    if args.svg and data.dim >= 2:
        paths["svg"] = os.path.join(out, "data.svg")
        plotting.scatter_svg(paths["svg"], data.x, title=cfg.dataset)
    write_manifest(out, "data", cfg.to_dict(), cfg.resolved_data_seed, started, paths,
                   {"dataset_id": data.name, "coordinates": coords})
    print(f"{len(data)} rows -> {paths['data']}")
    return EXIT_OK


def _context_rows(args, n, model):
    ctx_dim = model.encoder.spec.context_dim
    if not ctx_dim:
        if args.context:
            raise ConfigError("model takes no context")
        return None
    if not args.context:
        raise ConfigError(f"model needs --context with {ctx_dim} values")
    c = np.array([float(v) for v in args.context.split(",")])
    if c.shape != (ctx_dim,):
        raise ConfigError(f"--context needs {ctx_dim} values")
    return np.tile(c, (n, 1))


def cmd_sample(args):
    started = _now()
    model, meta = checkpoint.load(args.checkpoint)
    if model.decoder is None:
        raise ConfigError("checkpoint has no decoder to sample from")
    c = _context_rows(args, args.n, model)
    out = _prepare_out(args.out or os.path.join(os.environ.get(config.OUTPUT_ENV, config.DEFAULT_OUTPUT_DIR), "sample"))
    with threadpool_limits(args.threads or 1):
        x = likelihood.sample(model, args.n, rng_stream(args.seed, 5), c)
        pc = _particle_coordinates(meta)
        if args.full_coordinates and pc is not None:
            x = pc.to_full(x)
    paths = {"samples": os.path.join(out, "samples.csv")}
    datasets.write_csv(paths["samples"], x)
    if args.svg and x.shape[1] >= 2:
        paths["svg"] = os.path.join(out, "samples.svg")
        plotting.scatter_svg(paths["svg"], x, title="model samples")
    write_manifest(out, "sample", {"checkpoint": args.checkpoint, "n": args.n, "context": args.context,
                                   "full_coordinates": args.full_coordinates},
                   args.seed, started, paths)
    print(f"{args.n} samples -> {paths['samples']}")
    return EXIT_OK


def cmd_nll(args):
    started = _now()
    model, _ = checkpoint.load(args.checkpoint)
    x, c = datasets.read_csv(args.data)
    if args.side == "decoder" and model.decoder is None:
        raise ConfigError("checkpoint has no decoder; use --side encoder")
    out = _prepare_out(args.out or os.path.join(os.environ.get(config.OUTPUT_ENV, config.DEFAULT_OUTPUT_DIR), "nll"))
    with threadpool_limits(args.threads or 1):
        fn = likelihood.log_likelihood_decoder if args.side == "decoder" else likelihood.log_likelihood_encoder
        ll = np.atleast_1d(fn(model, x, c))
    path = os.path.join(out, "nll.csv")
    _write_rows(path, ["index", "log_likelihood"], [(i, float(v)) for i, v in enumerate(ll)])
    mean_nll = float(-np.mean(ll))
    write_manifest(out, "nll", {"checkpoint": args.checkpoint, "data": args.data, "side": args.side},
                   None, started, {"nll": path}, {"mean_nll": mean_nll})
    print(f"mean_nll={mean_nll!r} nats over {len(ll)} rows ({args.side} side) -> {path}")
    return EXIT_OK


def cmd_verify(args):
    started = _now()
    out = _prepare_out(args.out or os.path.join(os.environ.get(config.OUTPUT_ENV, config.DEFAULT_OUTPUT_DIR), "verify"))
    with threadpool_limits(args.threads or 1):
        ok, report = verify.run_suite(args.suite, args.seed, theorem2_trials=args.trials)
    path = os.path.join(out, "verify.json")
    checkpoint.atomic_write_text(path, json.dumps(report, indent=1, default=float) + "\n")
    write_manifest(out, "verify", {"suite": args.suite, "seed": args.seed, "trials": args.trials},
                   args.seed, started, {"report": path}, {"ok": ok})
    for name, res in report.items():
        print(f"{name}: {'PASS' if res['ok'] else 'FAIL'}" + (f" ({res['error']})" if "error" in res else ""))
    return EXIT_OK if ok else EXIT_FAILED


def _pair(text):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    return lo, hi


def cmd_landscape(args):
    started = _now()
    out = _prepare_out(args.out or os.path.join(os.environ.get(config.OUTPUT_ENV, config.DEFAULT_OUTPUT_DIR), "landscape"))
    m = verify.LinearModel1D(data_sigma=args.sigma, beta=args.beta)
    rows = verify.landscape_grid(m, args.a_range, args.b_range, args.n)
    path = os.path.join(out, "landscape.csv")
    _write_rows(path, ["variant", "a", "b", "da", "db", "magnitude"], rows)
    paths = {"grid": path}
    if args.svg:
        for variant in verify.VARIANTS:
            sel = [r for r in rows if r[0] == variant]
            p = os.path.join(out, f"landscape_{variant}.svg")
            plotting.quiver_svg(p, *zip(*[r[1:5] for r in sel]), title=f"{variant} gradient field")
            paths[f"svg_{variant}"] = p
    write_manifest(out, "landscape", {"sigma": args.sigma, "beta": args.beta, "n": args.n,
                                      "a_range": list(args.a_range), "b_range": list(args.b_range)},
                   None, started, paths)
    print(f"{len(rows)} grid rows -> {path}")
    return EXIT_OK


def cmd_reweight(args):
    started = _now()
    model, meta = checkpoint.load(args.checkpoint)
    if model.decoder is None:
        raise ConfigError("checkpoint has no decoder to sample from")
    pc = _particle_coordinates(meta)
    if args.potential:
        overrides = config.RunConfig(potential_params=args.potential_params).potential_overrides()
        pot = datasets.make_potential(args.potential, **overrides)
        if pc is not None:
            if (pot.n_particles, pot.space_dim) != (pc.potential.n_particles, pc.potential.space_dim):
                raise ConfigError(f"checkpoint was trained on a different particle system than {args.potential}")
            pc = dataclasses.replace(pc, potential=pot)
        elif model.dim != pot.dim:
            raise ConfigError(f"model dimension {model.dim} does not match {args.potential} ({pot.dim})")
    elif pc is None:
        raise ConfigError("checkpoint has no particle coordinates; pass --potential")
    energy = pot if pc is None else pc.energy
    out = _prepare_out(args.out or os.path.join(os.environ.get(config.OUTPUT_ENV, config.DEFAULT_OUTPUT_DIR), "reweight"))
    with threadpool_limits(args.threads or 1):
        with np.errstate(over="ignore"):
            ws = likelihood.sample_weighted(model, args.n, rng_stream(args.seed, 6), energy, args.temperature)
    # physical energy; differs from the model-coordinate energy by the frame Jacobian
    u = np.asarray(pot(ws.x) if pc is None else pc.potential(pc.to_full(ws.x)))
    ess = likelihood.effective_sample_size(ws.log_weight)
    mean_u, se_u = likelihood.self_normalized_mean(ws.log_weight, u)
    w = likelihood.normalized_weights(ws.log_weight)
    path = os.path.join(out, "weights.csv")
    _write_rows(path, ["index", "log_weight", "normalized_weight", "energy"],
                [(i, float(lw), float(wi), float(ui)) for i, (lw, wi, ui) in enumerate(zip(ws.log_weight, w, u))])
    summary = {"n": args.n, "ess": ess, "ess_fraction": ess / args.n, "mean_energy": mean_u,
               "mean_energy_se": se_u}
    write_manifest(out, "reweight", {"checkpoint": args.checkpoint, "potential": args.potential,
                                     "potential_params": args.potential_params, "n": args.n,
                                     "temperature": args.temperature},
                   args.seed, started, {"weights": path}, summary)
    print(f"ess={ess:.1f} n={args.n} ess_fraction={ess / args.n:.4f} "
          f"mean_energy={mean_u:.4f} +- {se_u:.4f} -> {path}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _add_run_flags(p):
    p.add_argument("--config", help="key = value config file, or a manifest.json to re-run")
    for f in dataclasses.fields(config.RunConfig):
        if f.name in ("threads", "out_dir"):
            continue
        default = f.default
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=argparse.SUPPRESS,
                       metavar=f.type.__name__.upper(), help=f"(default: {config.format_value(default)})")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS threads; 1 (the default) gives bit-reproducible runs")
    common.add_argument("--out", default=None,
                        help=f"output directory (default: ${config.OUTPUT_ENV} or {config.DEFAULT_OUTPUT_DIR}/<command>)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fff", description="Free-form flow training and evaluation.")
    parser.add_argument("--version", action="version", version=f"fff {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model from a config")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("beta-search", parents=[common], help="find the smallest stable beta")
    _add_run_flags(p)
    p.set_defaults(func=cmd_beta_search)

    p = sub.add_parser("data", parents=[common], help="write a dataset to CSV")
    _add_run_flags(p)
    p.add_argument("--svg", action="store_true", help="also write a scatter plot")
    p.set_defaults(func=cmd_data)

    p = sub.add_parser("sample", parents=[common], help="draw samples from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--context", default="", help="comma-separated context values for conditional models")
    p.add_argument("--full-coordinates", action="store_true",
                   help="lift particle-system samples back to full coordinates")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("nll", parents=[common], help="per-row log-likelihood of a CSV dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--side", choices=("decoder", "encoder"), default="decoder")
    p.set_defaults(func=cmd_nll)

    p = sub.add_parser("verify", parents=[common], help="run the numerical verification suite")
    p.add_argument("--suite", choices=("all",) + verify.SUITES, default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1000, help="random pairs for the bound check")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("landscape", parents=[common], help="gradient field of the 1-D linear model")
    p.add_argument("--sigma", type=float, default=1.5, help="data standard deviation")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--n", type=int, default=41, help="grid points per axis")
    p.add_argument("--a-range", type=_pair, default=(-2.0, 2.0))
    p.add_argument("--b-range", type=_pair, default=(-2.5, 2.5))
    p.add_argument("--svg", action="store_true", help="also write quiver plots")
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("reweight", parents=[common], help="importance-reweight model samples to a Boltzmann target")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--potential", choices=sorted(datasets.NAMED_POTENTIALS),
                   help="target system; defaults to the one recorded in the checkpoint")
    p.add_argument("--potential-params", default="", help="overrides such as 'd0=4.0,c=0.9'")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_reweight)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except checkpoint.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, FFFError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
