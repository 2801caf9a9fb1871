"""Run configuration and the ``key = value`` config-file format.

A config file holds one ``key = value`` per line; blank lines and lines
starting with ``#`` are ignored.  Keys are the field names of TrainConfig.
List values (``hidden_sizes``, ``split``) are comma-separated.
"""
import dataclasses
from dataclasses import dataclass, fields

from ..errors import ConfigError
from ..losses import LOSS_KINDS, LossSpec
from ..model import INIT_SCHEMES, MlpConfig

DEFAULT_POINTS = {"homoscedastic_sine": 1000, "heteroscedastic_sine": 500}


@dataclass(frozen=True)
class TrainConfig:
    # data: a generator name or "csv"
    dataset: str = "homoscedastic_sine"
    n_points: int = 0  # 0: generator default
    data_seed: int = 0
    csv_path: str = ""
    input_dim: int = 1
    target_dim: int = 1
    split: tuple = (0.8, 0.1, 0.1)
    whiten: bool = True
    # model
    hidden_sizes: tuple = (128, 128)
    activation: str = "tanh"
    init: str = "uniform_fan_in"
    variance_floor: float = 1e-8
    variance_ceiling: float = 1000.0
    # loss
    loss: str = "nll"
    beta: float = 0.0
    beta_var: float = -1.0  # negative: same as beta
    fixed_variance: float = 1.0
    include_constant: bool = True
    # optimisation
    optimizer: str = "adam"
    lr: float = 5e-4
    batch_size: int = 100
    max_updates: int = 200_000
    eval_every: int = 1000
    early_stop_patience: int = 0
    # diverged once the batch loss exceeds this multiple of max(1, |first batch loss|); 0: off
    divergence_factor: float = 100.0
    seed: int = 0
    out_dir: str = ""

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))
        if self.max_updates < 0:
            raise ConfigError("max_updates must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.divergence_factor < 0:
            raise ConfigError("divergence_factor must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}; choose from {LOSS_KINDS}")
        if self.init not in INIT_SCHEMES:
            raise ConfigError(f"unknown init {self.init!r}")
        if self.dataset == "csv" and not self.csv_path:
            raise ConfigError("dataset = csv needs csv_path")
        if self.dataset != "csv" and self.dataset not in DEFAULT_POINTS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        # surfaces model/loss config errors before any training
        self.loss_spec()
        self.mlp_config()

    @property
    def points(self):
        return self.n_points or DEFAULT_POINTS.get(self.dataset, 0)

    def loss_spec(self):
        beta_var = None if self.beta_var < 0 else self.beta_var
        beta = self.beta if self.loss == "beta-nll" else 0.0
        return LossSpec(self.loss, beta, beta_var if self.loss == "beta-nll" else None,
                        self.fixed_variance, self.include_constant)

    def mlp_config(self):
        return MlpConfig(self.input_dim, self.hidden_sizes, self.activation, self.target_dim,
                         self.variance_floor, self.variance_ceiling, self.init)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["split"] = list(self.split)
        return d

    @property
    def label(self):
        arch = "x".join(str(h) for h in self.hidden_sizes)
        return f"{self.loss_spec().label}_lr{self.lr:g}_{arch}_{self.activation}_s{self.seed}"


def _coerce(field_type, raw, key):
    raw = raw.strip()
    try:
        if field_type in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if field_type in (int, "int"):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if field_type in (float, "float"):
            return float(raw)
        if field_type in (tuple, "tuple"):
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def coerce_overrides(pairs):
    """Turn ``{key: string}`` into typed values for TrainConfig fields."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for key, raw in pairs.items():
        key = key.strip().replace("-", "_")
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(types[key], str(raw), key)
    return out


def parse_config_text(text):
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return coerce_overrides(pairs)


def load_config(path, **overrides):
    with open(path, encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    values.update(overrides)
    return TrainConfig(**values)


def dump_config(config):
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
