"""Declarative run configuration: a key-value text format with [sections],
parsed into the per-module config dataclasses. The canonical text form is
copied into every output directory for provenance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .adversary import AdversaryConfig
from .codec import CodecConfig
from .errors import ConfigError

TASKS = ("train-vqgan", "train-transformer", "sample", "reconstruct",
         "f-study", "ordering-study", "speed-compare", "kmeans-baseline")


def _parse_value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in raw:
        return [_parse_value(part) for part in raw.split(",")]
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_section(text: str) -> dict:
    """Flat ``key = value`` lines to a dict (used for checkpoint headers)."""
    out = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"malformed config line: {line!r}")
        key, _, raw = line.partition("=")
        out[key.strip()] = _parse_value(raw)
    return out


def format_section(mapping: dict) -> str:
    return "\n".join(f"{k} = {_format_value(v)}" for k, v in mapping.items()) + "\n"


def parse_config_text(text: str) -> dict:
    """Sectioned text to {key: value, section: {key: value}}."""
    top: dict = {}
    current = top
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            current = top.setdefault(name, {})
            if not isinstance(current, dict):
                raise ConfigError(f"section name {name!r} collides with a key")
            continue
        if "=" not in line:
            raise ConfigError(f"malformed config line: {line!r}")
        key, _, raw = line.partition("=")
        current[key.strip()] = _parse_value(raw)
    return top


def format_config(mapping: dict) -> str:
    lines = []
    sections = []
    for k, v in mapping.items():
        if isinstance(v, dict):
            sections.append((k, v))
        else:
            lines.append(f"{k} = {_format_value(v)}")
    for name, body in sections:
        lines.append("")
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_format_value(v)}" for k, v in body.items())
    return "\n".join(lines) + "\n"


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.kind != "adam":
            raise ConfigError(f"unsupported optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")


# task-appropriate defaults when no [optimizer] section is given
CODEC_OPTIMIZER = OptimizerConfig(lr=1e-4, beta1=0.5, beta2=0.9)
TRANSFORMER_OPTIMIZER = OptimizerConfig(lr=3e-4, beta1=0.9, beta2=0.95)


@dataclass
class TransformerArch:
    n_layers: int = 8
    n_heads: int = 8
    d_model: int = 256
    d_ff: int = 1024
    dropout: float = 0.0
    seq_len: int = 0  # 0 = sized automatically from the latent grid
    K: int = 0        # 0 = inherit the codec's codebook size
    use_coords: bool = False


@dataclass
class SamplingConfig:
    temperature: float = 1.0
    top_k: int = 100
    height: int = 16
    width: int = 16
    n_samples: int = 4
    coords: bool = False


@dataclass
class ExperimentSection:
    m_values: tuple[int, ...] = (0, 1, 2)
    orders: tuple[str, ...] = ("row_major", "spiral_out", "z_curve",
                               "subsample", "alternate", "spiral_in")
    codec_steps: int = 300
    transformer_steps: int = 300
    pixel_colors: int = 512
    n_timed_samples: int = 1


@dataclass
class ExperimentConfig:
    task: str = "train-vqgan"
    dataset: str = ""
    condition_dataset: str = ""
    out_dir: str = "runs/out"
    seed: int = 0
    steps: int = 500
    batch_size: int = 8
    eval_every: int = 100
    checkpoint_every: int = 500
    scan_order: str = "row_major"
    conditioning: str = "none"  # none | spatial | class
    dtype: str = "float64"
    codebook_reseed_every: int = 0  # 0 = off; N = revive dead codes every N steps
    codec: CodecConfig = field(default_factory=CodecConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    transformer: TransformerArch = field(default_factory=TransformerArch)
    optimizer: OptimizerConfig | None = None
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    codec_checkpoint: str = ""
    cond_codec_checkpoint: str = ""
    transformer_checkpoint: str = ""

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.conditioning not in ("none", "spatial", "class"):
            raise ConfigError(f"conditioning must be none/spatial/class, got {self.conditioning!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    def optimizer_for(self, stage: str) -> OptimizerConfig:
        if self.optimizer is not None:
            return self.optimizer
        return TRANSFORMER_OPTIMIZER if stage == "transformer" else CODEC_OPTIMIZER


_SECTION_TYPES = {
    "codec": CodecConfig,
    "adversary": AdversaryConfig,
    "transformer": TransformerArch,
    "optimizer": OptimizerConfig,
    "sampling": SamplingConfig,
    "experiment": ExperimentSection,
}

_TUPLE_KEYS = {("codec", "channel_multipliers"), ("experiment", "m_values"),
               ("experiment", "orders")}


def _build_section(name: str, body: dict):
    cls = _SECTION_TYPES[name]
    allowed = set(cls.__dataclass_fields__)
    unknown = set(body) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    kwargs = {}
    for k, v in body.items():
        if (name, k) in _TUPLE_KEYS:
            v = tuple(v) if isinstance(v, list) else (v,)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad [{name}] section: {exc}") from exc


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    mapping = dict(mapping)
    kwargs = {}
    for name in _SECTION_TYPES:
        if name in mapping:
            kwargs[name] = _build_section(name, mapping.pop(name))
    top_allowed = {f for f in ExperimentConfig.__dataclass_fields__
                   if f not in _SECTION_TYPES}
    unknown = set(mapping) - top_allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs.update(mapping)
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return config_from_mapping(parse_config_text(path.read_text()))


def config_to_mapping(cfg: ExperimentConfig) -> dict:
    out: dict = {}
    for name, f in ExperimentConfig.__dataclass_fields__.items():
        value = getattr(cfg, name)
        if name in _SECTION_TYPES:
            if value is None:
                continue
            if hasattr(value, "to_mapping"):
                out[name] = value.to_mapping()
            else:
                out[name] = {k: getattr(value, k) for k in value.__dataclass_fields__}
        else:
            out[name] = value
    return out


def write_provenance(out_dir, cfg: ExperimentConfig) -> Path:
    """Store the canonical config text next to the results."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.used"
    path.write_text(format_config(config_to_mapping(cfg)))
    return path
