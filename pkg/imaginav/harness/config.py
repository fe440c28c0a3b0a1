"""imaginav module for loading run configurations.

A run configuration is a JSON document whose top-level sections mirror the
frozen configuration dataclasses of the core modules. Every section is
optional and missing fields take the dataclass defaults.
"""

import dataclasses
import hashlib
import json
import math
import os

from ..core.geometry import PlatformLimits
from ..core.mapping import MappingConfig
from ..core.planner import PlannerConfig
from ..core.scene import MotionNoise, SensorConfig
from ..core.value import CueWeights, FusionParams
from ..core.world_model import NoiseConfig


OUTPUT_DIR_ENV = 'IMAGINAV_OUTPUT_DIR'
WORLD_MODELS = ('oracle', 'noisy')
SECTIONS = {
    'sensor': SensorConfig,
    'limits': PlatformLimits,
    'motion_noise': MotionNoise,
    'mapping': MappingConfig,
    'cues': CueWeights,
    'fusion': FusionParams,
    'noise': NoiseConfig,
    'planner': PlannerConfig,
}
SCALARS = ('world_model', 'parallelism', 'calibration_episodes')


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration documents."""


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigError(f'Section {name!r} must be a JSON object.')
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f'Unknown keys in section {name!r}: {", ".join(unknown)}.')
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})
    except (TypeError, ValueError) as e:
        raise ConfigError(f'Invalid section {name!r}: {e}') from e


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything a suite run depends on besides the episodes themselves."""
    sensor: SensorConfig = SensorConfig()
    limits: PlatformLimits = PlatformLimits()
    motion_noise: MotionNoise = MotionNoise()
    mapping: MappingConfig = MappingConfig()
    cues: CueWeights = CueWeights()
    fusion: FusionParams = FusionParams()
    noise: NoiseConfig = NoiseConfig()
    planner: PlannerConfig = PlannerConfig()
    world_model: str = 'oracle'
    parallelism: int = 1
    calibration_episodes: int = 5

    def __post_init__(self):
        if self.world_model not in WORLD_MODELS:
            raise ConfigError(f'world_model must be one of {WORLD_MODELS}, got {self.world_model!r}.')
        if self.parallelism < 1:
            raise ConfigError('parallelism must be at least 1.')
        if self.calibration_episodes < 0:
            raise ConfigError('calibration_episodes must be non-negative.')

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError('A run configuration must be a JSON object.')
        unknown = sorted(set(data) - set(SECTIONS) - set(SCALARS))
        if unknown:
            raise ConfigError(f'Unknown configuration keys: {", ".join(unknown)}.')
        kwargs = {name: _section(cls_, data[name], name) for name, cls_ in SECTIONS.items() if name in data}
        kwargs.update({name: data[name] for name in SCALARS if name in data})
        return cls(**kwargs)

    def to_dict(self):
        out = {name: _jsonable(dataclasses.asdict(getattr(self, name))) for name in SECTIONS}
        out.update({name: getattr(self, name) for name in SCALARS})
        return out

    def replace(self, **sections):
        """A copy with whole sections or section fields replaced.

        Values may be dataclass instances or dicts of field overrides, e.g.
        ``config.replace(fusion={'lambda1': 0.0})``.
        """
        changes = {}
        for name, update in sections.items():
            if name in SECTIONS and isinstance(update, dict):
                try:
                    changes[name] = dataclasses.replace(getattr(self, name), **update)
                except (TypeError, ValueError) as e:
                    raise ConfigError(f'Invalid override of section {name!r}: {e}') from e
            elif name in SECTIONS or name in SCALARS:
                changes[name] = update
            else:
                raise ConfigError(f'Unknown configuration key {name!r}.')
        return dataclasses.replace(self, **changes)

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))

    def digest(self):
        """SHA-256 of the canonical JSON form."""
        return hashlib.sha256(self.canonical_json().encode('utf-8')).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def load_config(path=None):
    """Reads a RunConfig from a JSON file; ``None`` yields the defaults.

    Raises:
        ConfigError: if the file cannot be parsed or holds invalid values
    """
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f'Cannot read configuration {path}: {e}') from e
    except json.JSONDecodeError as e:
        raise ConfigError(f'Configuration {path} is not valid JSON: {e}') from e
    return RunConfig.from_dict(data)


def default_output_dir(fallback='.'):
    return os.environ.get(OUTPUT_DIR_ENV, fallback)
