"""Model/training configuration and the flat ``key = value`` file format."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


def load_flat_ini(path) -> dict[str, str]:
    """Parse a section-less INI file into a flat dict (comments allowed)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[root]\n" + path.read_text())
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out = dict(parser["root"])
    for section in parser.sections():
        if section != "root":
            out.update(parser[section])
    return out


@dataclass
class ModelConfig:
    # widths; item width = item id width + category width, query likewise
    d_i: int = 32
    d_q: int = 32
    d: int = 32
    d_u: int | None = None  # defaults to d
    item_attr_dim: int = 8
    query_term_dim: int = 16
    max_rec_len: int = 15
    max_search_len: int = 15
    max_clicks: int = 5
    n_layers: int = 1
    n_heads: int = 2
    ffn_dim: int | None = None  # defaults to 2 * d
    dropout: float = 0.0
    mlp_hidden: int = 64
    threshold: str = "mean"  # mean | median | a float constant such as 0.125
    use_mie: bool = True
    init_std: float = 0.02
    bilinear_init: str = "identity"  # identity | normal

    def __post_init__(self):
        if self.d_u is None:
            self.d_u = self.d
        if self.ffn_dim is None:
            self.ffn_dim = 2 * self.d

    def validate(self) -> None:
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if not 0 < self.item_attr_dim < self.d_i:
            raise ConfigError("item_attr_dim must lie strictly between 0 and d_i")
        if not 0 < self.query_term_dim < self.d_q:
            raise ConfigError("query_term_dim must lie strictly between 0 and d_q")
        for name in ("d", "max_rec_len", "max_search_len", "max_clicks", "n_layers", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        threshold_value(self.threshold, 4)


def threshold_value(strategy: str, n_real: int):
    """Return the selection threshold for a sequence of ``n_real`` positions.

    ``None`` means the median strategy (resolved per sequence by the caller).
    """
    s = str(strategy).strip().lower()
    if s == "mean":
        return 1.0 / n_real
    if s == "median":
        return None
    try:
        if "/" in s:
            num, den = s.split("/")
            value = float(num) / float(den)
        else:
            value = float(s)
    except ValueError:
        raise ConfigError(f"unknown threshold strategy {strategy!r}") from None
    if not 0 < value < 1:
        raise ConfigError(f"constant threshold must lie in (0, 1), got {value}")
    return value


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    alpha: float = 0.1
    beta: float = 0.001
    lam: float = 1e-6
    margin: float = 0.1
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    n_negatives: int = 4  # per training example (N - 1)
    n_align_negatives: int = 64
    tau_init: float = 0.07
    tau_min: float = 1e-3
    grad_clip: float | None = 5.0
    eval_negatives: int = 99
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        for name in ("batch_size", "max_epochs", "patience", "n_align_negatives"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("learning_rate", "alpha", "beta", "lam", "margin", "n_negatives"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.tau_init <= 0 or self.tau_min <= 0:
            raise ConfigError("temperature must be positive")
        self.model.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        model = ModelConfig(**data.pop("model", {}))
        return cls(model=model, **data)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_updates(self, **kwargs) -> "TrainConfig":
        """Copy with flat keys routed to this config or its model config."""
        data = self.to_dict()
        model_keys = {f.name for f in fields(ModelConfig)}
        for k, v in kwargs.items():
            if k in model_keys:
                data["model"][k] = v
            elif k in data:
                data[k] = v
            else:
                raise ConfigError(f"unknown config key {k!r}")
        return TrainConfig.from_dict(data)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        raw = load_flat_ini(path)
        cfg = cls()
        typed = {}
        for dc in (cfg, cfg.model):
            for f in fields(dc):
                if f.name in raw and f.name != "model":
                    typed[f.name] = _coerce(raw[f.name], getattr(dc, f.name), f.name)
        cfg = cfg.with_updates(**typed)
        cfg.validate()
        return cfg


def _coerce(text: str, current, name: str):
    text = text.strip()
    try:
        if isinstance(current, bool):
            if text.lower() in {"1", "true", "yes", "on"}:
                return True
            if text.lower() in {"0", "false", "no", "off"}:
                return False
            raise ValueError(text)
        if text.lower() in {"none", ""}:
            return None
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float) or current is None:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
