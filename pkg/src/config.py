import json
import logging
import os
from dataclasses import dataclass, field, fields, replace
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import pytz
from dotenv import dotenv_values, load_dotenv

from . import __version__
from .agent import AgentConfig
from .classifier import ClassifierConfig
from .corpus import ToyGenSpec
from .environment import RewardConfig
from .errors import ConfigError
from .photo2sketch import DistortionParams
from .trainer import TrainerConfig

load_dotenv()

logger = logging.getLogger(__name__)

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')


def _env_seed() -> Optional[int]:
    value = os.getenv('SKETCHLAB_SEED')
    return int(value) if value not in (None, '') else None


@dataclass
class Config:
    """Environment settings (a .env file in the working directory is loaded on import)"""
    seed: Optional[int] = field(default_factory=_env_seed)
    out_dir: str = field(default_factory=lambda: os.getenv('SKETCHLAB_OUT_DIR', 'runs'))
    workers: int = field(default_factory=lambda: int(os.getenv('SKETCHLAB_WORKERS', '1')))
    log_level: str = field(default_factory=lambda: os.getenv('SKETCHLAB_LOG_LEVEL', 'INFO').upper())

    def validate(self):
        """Validate environment configuration"""
        if self.workers < 1:
            raise ConfigError("SKETCHLAB_WORKERS must be >= 1")
        if self.log_level not in LOG_LEVELS:
            raise ConfigError(f"SKETCHLAB_LOG_LEVEL must be one of {LOG_LEVELS}")


@dataclass
class RunSettings:
    seed: int = 0
    out_dir: str = 'runs'
    workers: int = 1
    svg_timestamp: bool = False


@dataclass
class CorpusSettings:
    n_per_class: int = 200  # toy generation
    per_class_cap: int = 0  # 0 = no cap
    test_fraction: float = 0.2


@dataclass
class ResampleSettings:
    step_length: float = 5.0


@dataclass
class PhotoSettings:
    threshold: int = 128
    variants: int = 5
    edge_size: int = 64


@dataclass
class RetrievalSettings:
    margin: float = 0.2
    fusion: str = 'mean'
    deltas: Tuple[float, ...] = (-0.1, 0.0, 0.1)
    ks: Tuple[int, ...] = (1, 10)
    projection_dim: int = 32
    projection_epochs: int = 0  # 0 = no projection
    projection_lr: float = 1e-2


@dataclass
class EvaluationSettings:
    deltas: Tuple[float, ...] = (-0.1, 0.0, 0.1)  # eval-abstraction levels


# section name -> attribute on RunConfig
SECTIONS = ('run', 'toy', 'corpus', 'classifier', 'agent', 'reward', 'trainer',
            'distortion', 'resample', 'p2s', 'retrieval', 'evaluation')
# set once under run.* and copied into every section that has them
SHARED_FIELDS = ('seed', 'workers')
VARIABLE_LENGTH = {'toy.classes', 'retrieval.deltas', 'retrieval.ks', 'evaluation.deltas'}


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _coerce(key: str, raw: str, default):
    """Convert raw text to the type of the field's default value"""
    try:
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(',') if x.strip()]
            kind = type(default[0]) if default else str
            if kind is int:
                values = tuple(int(x) for x in items)
            elif kind is float:
                values = tuple(float(x) for x in items)
            else:
                values = tuple(items)
            if key not in VARIABLE_LENGTH and len(values) != len(default):
                raise ValueError(f"expected {len(default)} comma-separated values")
            if not values:
                raise ValueError("empty list")
            return values
        return raw.strip()
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({e})") from e


def _format(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ','.join(_format(v) for v in value)
    return str(value)


@dataclass
class RunConfig:
    """Every tunable of a run, addressed as section.key"""
    run: RunSettings = field(default_factory=RunSettings)
    toy: ToyGenSpec = field(default_factory=ToyGenSpec)
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    distortion: DistortionParams = field(default_factory=DistortionParams)
    resample: ResampleSettings = field(default_factory=ResampleSettings)
    p2s: PhotoSettings = field(default_factory=PhotoSettings)
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)

    @staticmethod
    def keys_of(section: str, obj) -> List[str]:
        return [f.name for f in fields(obj) if section == 'run' or f.name not in SHARED_FIELDS]

    def keys(self) -> List[str]:
        return [f"{s}.{k}" for s in SECTIONS for k in self.keys_of(s, getattr(self, s))]

    def set(self, key: str, raw: str) -> None:
        section, _, name = key.strip().partition('.')
        if section not in SECTIONS or name not in self.keys_of(section, getattr(self, section)):
            raise ConfigError(f"unknown configuration key {key!r}")
        current = getattr(self, section)
        value = _coerce(key, raw, getattr(current, name))
        setattr(self, section, replace(current, **{name: value}))

    def update(self, values: Dict[str, Optional[str]]) -> None:
        for key, raw in values.items():
            if raw is None:
                raise ConfigError(f"configuration key {key!r} has no value")
            self.set(key, raw)

    def section(self, name: str):
        """Section dataclass with run.seed / run.workers filled in"""
        obj = getattr(self, name)
        shared = {k: getattr(self.run, k) for k in SHARED_FIELDS if k in {f.name for f in fields(obj)}}
        return replace(obj, **shared) if shared and name != 'run' else obj

    def to_dict(self) -> Dict[str, str]:
        out = {}
        for key in self.keys():
            section, _, name = key.partition('.')
            out[key] = _format(getattr(getattr(self, section), name))
        return out

    def to_env_text(self) -> str:
        return ''.join(f"{k}={v}\n" for k, v in sorted(self.to_dict().items()))

    def validate(self) -> None:
        for name in ('toy', 'classifier', 'agent', 'reward', 'trainer', 'distortion'):
            try:
                self.section(name).validate()
            except ValueError as e:
                raise ConfigError(f"[{name}] {e}") from e
        if self.resample.step_length <= 0:
            raise ConfigError("resample.step_length must be > 0")
        if self.retrieval.fusion not in ('mean', 'min'):
            raise ConfigError("retrieval.fusion must be 'mean' or 'min'")
        if self.run.workers < 1:
            raise ConfigError("run.workers must be >= 1")


def load_run_config(path=None, overrides: Iterable[str] = (), env: Optional[Config] = None) -> RunConfig:
    """defaults < environment < config file < key=value overrides"""
    config = RunConfig()
    env = env or Config()
    env.validate()
    if env.seed is not None:
        config.run = replace(config.run, seed=env.seed)
    config.run = replace(config.run, out_dir=env.out_dir, workers=env.workers)

    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} not found")
        config.update(dotenv_values(path))
        logger.info(f"Loaded run configuration from {path}")
    for item in overrides:
        key, sep, raw = item.partition('=')
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        config.set(key, raw)
    return config


def write_run_files(out_dir, config: RunConfig, command: str, argv: List[str]) -> None:
    """run_config.env (loadable again with --config) and run_meta.json"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / 'run_config.env').write_text(config.to_env_text(), encoding='utf-8')
    meta = {
        'version': __version__,
        'seed': config.run.seed,
        'command': command,
        'argv': list(argv),
        'created': datetime.now(pytz.utc).isoformat(),
    }
    (out / 'run_meta.json').write_text(json.dumps(meta, indent=2) + '\n', encoding='utf-8')
