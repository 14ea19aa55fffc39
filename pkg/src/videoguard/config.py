"""JSON experiment configuration.

Keys must match the dataclass fields exactly; anything unknown is an error.
A minimal file is ``{}``, which selects every default. Example::

    {
      "video": {"pattern": {"kind": "moving_square", "velocity": 2}},
      "stage1": {"lam": 5.0},
      "pso": {"epsilon_video": 16, "iterations": 300}
    }
"""

from dataclasses import asdict, dataclass, field, fields
import json
from pathlib import Path

from .diffusion import PATCH
from .reference import RESOLUTION as FULL_RESOLUTION
from .stage1 import Stage1Config
from .stage2 import PsoConfig
from .synth import SyntheticPattern


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass
class VideoSource:
    """Either a synthetic pattern or a path (VGT file or PPM frame directory)."""

    pattern: SyntheticPattern | None = None
    path: str | None = None

    def __post_init__(self):
        if self.pattern is not None and self.path is not None:
            raise ConfigError("video: give either 'pattern' or 'path', not both")
        if self.pattern is None and self.path is None:
            self.pattern = SyntheticPattern()


@dataclass
class ScheduleConfig:
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class DenoiserConfig:
    variant: str = "affine"
    seed: int = 0
    params: dict = field(default_factory=dict)


@dataclass
class BasisConfig:
    M: int = 16
    gain: float | None = None


@dataclass
class ExperimentConfig:
    video: VideoSource = field(default_factory=VideoSource)
    frames: int = 8
    resolution: int = 64
    channels: int = 3
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    inversion_prompt: str = ""
    edit_prompt: str = "a red car"
    embedder_seed: int = 0
    stage1: Stage1Config = field(default_factory=Stage1Config)
    pso: PsoConfig = field(default_factory=PsoConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    out: str = "out"

    def __post_init__(self):
        if self.frames < 3:
            raise ConfigError("frames must be >= 3")
        if self.resolution < PATCH or self.resolution % PATCH:
            raise ConfigError(f"resolution must be a positive multiple of {PATCH}")
        if self.channels < 1:
            raise ConfigError("channels must be positive")
        if self.inversion_prompt != "":
            raise ConfigError("inversion_prompt must be empty: inversion always uses the null prompt")

    @property
    def scale_factor(self):
        """Linear downscale relative to full-size 512 x 512 footage."""
        return FULL_RESOLUTION / self.resolution

    def to_dict(self):
        d = asdict(self)
        d["stage1"].pop("target", None)
        return d


_NESTED = {
    "video": VideoSource,
    "schedule": ScheduleConfig,
    "denoiser": DenoiserConfig,
    "basis": BasisConfig,
    "stage1": Stage1Config,
    "pso": PsoConfig,
}

_SKIP = {Stage1Config: {"target"}}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    allowed = {f.name: f for f in fields(cls) if f.name not in _SKIP.get(cls, ())}
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get(name) if cls is ExperimentConfig else None
        if sub is not None:
            value = _build(sub, value, f"{where}.{name}" if where else name)
        elif cls is VideoSource and name == "pattern" and value is not None:
            if isinstance(value, dict):
                value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
            value = _build(SyntheticPattern, value, f"{where}.pattern")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data):
    return _build(ExperimentConfig, data, "")


def load_config(path):
    """Parse a JSON config file into an :class:`ExperimentConfig`."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data)
