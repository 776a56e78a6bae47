"""Run configuration: defaults, ``key = value`` config files and flag overrides.

Precedence is flag > file > default, and every resolved field remembers where
its value came from.
"""

from dataclasses import asdict, dataclass, field, fields
import hashlib
import json
from pathlib import Path

from .errors import ValidationError
from .losses import LossConfig
from .model import ModelConfig


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_min: float = 1e-7
    epochs: int = 400
    steps: int = 0  # overrides epochs when positive
    batch: int = 7
    patch: int = 256  # LR patch side
    seed: int = 0
    grad_clip: float = 10.0
    checkpoint_every: int = 500
    log_every: int = 50
    no_lc: bool = False

    def __post_init__(self):
        for name in ("lr", "epochs", "batch", "patch", "grad_clip"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr_min < 0 or self.lr_min > self.lr:
            raise ValidationError(f"lr_min must lie in [0, lr], got {self.lr_min}")
        if self.patch % 4:
            raise ValidationError(f"patch must be divisible by 4, got {self.patch}")


SECTIONS = {"model": ModelConfig, "loss": LossConfig, "train": TrainConfig}
EXTRA_FIELDS = {"flow": "classical"}


def _field_index():
    index = {}
    for section, cls in SECTIONS.items():
        for f in fields(cls):
            if f.name in index:
                raise RuntimeError(f"duplicate config key {f.name}")
            index[f.name] = (section, f.type if isinstance(f.type, type) else type(f.default))
    for key, default in EXTRA_FIELDS.items():
        index[key] = (None, type(default))
    return index


FIELD_INDEX = _field_index()


def coerce(key, value):
    """Convert a string (or already typed) value to the declared type of ``key``."""
    if key not in FIELD_INDEX:
        raise ValidationError(f"unknown config key {key!r}")
    typ = FIELD_INDEX[key][1]
    if not isinstance(value, str):
        return typ(value)
    text = value.strip()
    if typ is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{key}: expected a boolean, got {value!r}")
    try:
        if typ is int:
            return int(float(text)) if "e" in text.lower() else int(text)
        return typ(text)
    except ValueError as exc:
        raise ValidationError(f"{key}: cannot parse {value!r} as {typ.__name__}") from exc


def parse_config_file(path):
    """Read a flat ``key = value`` file; ``#`` starts a comment."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc.strerror}") from exc
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in FIELD_INDEX:
            raise ValidationError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = coerce(key, value)
    return values


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    flow: str = "classical"
    sources: dict = field(default_factory=dict)

    def to_dict(self):
        return {"model": asdict(self.model), "loss": asdict(self.loss),
                "train": asdict(self.train), "flow": self.flow}

    @classmethod
    def from_dict(cls, data):
        return cls(ModelConfig(**data["model"]), LossConfig(**data["loss"]),
                   TrainConfig(**data["train"]), data.get("flow", "classical"))

    def fingerprint(self):
        return fingerprint(self.to_dict())

    def model_fingerprint(self):
        return fingerprint({"model": asdict(self.model), "flow": self.flow})

    def describe(self):
        """One ``key = value  # source`` line per field."""
        lines = []
        flat = flatten(self.to_dict())
        for key in sorted(flat):
            lines.append(f"{key} = {flat[key]}  # {self.sources.get(key, 'default')}")
        return "\n".join(lines)


def fingerprint(data):
    blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def flatten(data):
    flat = {}
    for key, value in data.items():
        if isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    return flat


def resolve(config_file=None, overrides=None, base=None):
    """Merge defaults (or ``base`` values), a config file and flag overrides."""
    values, sources = {}, {}
    if base:
        for key, value in base.items():
            values[key] = coerce(key, value)
            sources[key] = "default"
    if config_file is not None:
        for key, value in parse_config_file(config_file).items():
            values[key] = value
            sources[key] = "file"
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        values[key] = coerce(key, value)
        sources[key] = "flag"
    sections = {name: {} for name in SECTIONS}
    extra = {}
    for key, value in values.items():
        section = FIELD_INDEX[key][0]
        if section is None:
            extra[key] = value
        else:
            sections[section][key] = value
    cfg = RunConfig(ModelConfig(**sections["model"]), LossConfig(**sections["loss"]),
                    TrainConfig(**sections["train"]), extra.get("flow", "classical"), sources)
    return cfg


DESK_PRESET = {
    "channels": 16, "num_scales": 3, "num_atoms": 4, "radius": 1,
    "extract_blocks": 4, "up_blocks": 6, "patch": 32, "batch": 2,
}
