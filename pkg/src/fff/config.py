"""Flat ``key = value`` run configuration shared by the train, beta-search and data commands."""
import dataclasses
import json
import os
from dataclasses import dataclass, fields

from .datasets import COORDINATES
from .errors import ConfigError
from .train import TrainConfig

DEFAULT_OUTPUT_DIR = "fff-runs"
OUTPUT_ENV = "FFF_OUTPUT_DIR"

DATASETS = ("two_moons", "gmm2", "normal", "dw4", "lj13", "lj55", "conditional")
MODELS = ("mlp", "linear")


@dataclass
class RunConfig:
    # optimization (mirrors TrainConfig)
    steps: int = 1000
    batch_size: int = 256
    lr: float = 1e-3
    schedule: str = "constant"
    gamma: float = 1.0
    grad_clip: float = 0.0
    beta: float = 10.0
    k_probes: int = 1
    probe_kind: str = "gaussian"
    seed: int = 0
    eval_every: int = 100
    eval_points: int = 512
    objective: str = "fff"
    final_layer_scale: float = 0.0
    # networks
    model: str = "mlp"
    hidden: tuple = (64, 64)
    activation: str = "tanh"
    global_skip: bool = True
    context_every_layer: bool = False
    # data: a generator name or a CSV path
    dataset: str = "two_moons"
    eval_dataset: str = ""
    n_data: int = 10000
    n_eval: int = 512
    data_seed: int = -1             # -1: use seed
    noise: float = 0.1
    sigma: float = 1.5
    separation: float = 4.0
    cond_dim: int = 2
    cond_noise: float = 1.0
    potential_params: str = ""      # e.g. "d0=4.0,c=0.9"
    mcmc_burnin: int = 2000
    mcmc_thin: int = 10
    mcmc_step: float = 0.5
    augment: bool = True
    coordinates: str = "auto"      # particle systems: auto, com, internal
    standardize: bool = True
    # chaining and search
    init_checkpoint: str = ""
    beta_factor: float = 10.0
    beta_rounds: int = 6
    beta_steps: int = 0             # 0: one epoch
    beta_threshold: float = 5.0
    # runtime
    threads: int = 1
    out_dir: str = ""

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if self.dataset in ("",):
            raise ConfigError("dataset must be set")
        if self.coordinates not in COORDINATES:
            raise ConfigError(f"coordinates must be one of {COORDINATES}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self):
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    @property
    def resolved_data_seed(self):
        return self.seed if self.data_seed < 0 else self.data_seed

    def resolved_out_dir(self, command):
        if self.out_dir:
            return self.out_dir
        return os.path.join(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT_DIR), command)

    def potential_overrides(self):
        out = {}
        for item in filter(None, (s.strip() for s in self.potential_params.split(","))):
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"potential_params entry {item!r} is not key=value")
            try:
                out[key.strip()] = float(value)
            except ValueError:
                raise ConfigError(f"potential parameter {key.strip()!r} is not a number") from None
        return out

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {format_value(v)}")
        return "\n".join(lines) + "\n"


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple | list):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(key, text):
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind in (bool, "bool"):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        if kind in (tuple, "tuple"):
            return tuple(int(p) for p in text.replace(" ", "").split(",") if p)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {getattr(kind, '__name__', kind)}") from None
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        text = text[1:-1]
    return text


def coerce(key, value):
    """Check a Python value (e.g. from a JSON manifest) against the field type."""
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    if kind in (tuple, "tuple") and isinstance(value, list | tuple):
        return tuple(int(v) for v in value)
    if kind in (float, "float") and isinstance(value, int | float) and not isinstance(value, bool):
        return float(value)
    if kind in (bool, "bool") and isinstance(value, bool):
        return value
    if kind in (int, "int") and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind in (str, "str") and isinstance(value, str):
        return value
    raise ConfigError(f"{key}: {value!r} has the wrong type")


def parse_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = parse_value(key, value)
    return values


def load_values(path):
    """Key/value pairs from a config file, or from the ``config`` block of a run manifest."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    if path.endswith(".json"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = doc.get("config", doc)
        return {k: coerce(k, v) for k, v in cfg.items()}
    return parse_text(text, path)


def build(path=None, overrides=None):
    """Defaults, then file values, then overrides."""
    values = load_values(path) if path else {}
    values.update(overrides or {})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
