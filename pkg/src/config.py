"""Configuration management module for the SMaRt toy laboratory."""

import os
import yaml
from typing import Dict, Optional, Any, Tuple, Type
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from src.exceptions import ConfigurationError, create_config_error


class JacobianMode(Enum):
    """How the regularity gradient treats the noise predictor's Jacobian."""
    FULL = "full"
    OMIT = "omit"


@dataclass
class DataConfig:
    """Toy data configuration."""
    sigma: float = 0.05


@dataclass
class DpmConfig:
    """Diffusion model schedule and training configuration."""
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    iters: int = 40000
    lr: float = 1e-3
    lr_final: float = 1e-5
    batch: int = 512
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999


@dataclass
class GanConfig:
    """Generator/discriminator training configuration."""
    latent_dim: int = 2
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    batch: int = 256
    iters: int = 30000
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999


@dataclass
class SmartConfig:
    """Score matching regularity configuration."""
    enabled: bool = True
    lambda_score: float = 0.1
    t_lo: int = 40
    t_hi: int = 60
    freq: int = 8
    jacobian: JacobianMode = JacobianMode.FULL
    fresh_latents: bool = True
    separate_moments: bool = True
    lr: float = 1e-3


@dataclass
class EvalConfig:
    """Periodic evaluation configuration."""
    interval: int = 1000
    samples: int = 10000
    tau: float = 0.15
    shards: int = 4
    ddim_steps: int = 50


@dataclass
class CondConfig:
    """Class-conditional training configuration."""
    enabled: bool = False


@dataclass
class RefineConfig:
    """Refinement demo configuration."""
    t: int = 40
    steps: int = 200
    samples: int = 4096


@dataclass
class LoggingConfig:
    """Logging configuration."""
    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


@dataclass
class TrainConfig:
    """Every tunable of a laboratory run."""
    seed: int = 0
    adam_eps: float = 1e-8
    data: DataConfig = field(default_factory=DataConfig)
    dpm: DpmConfig = field(default_factory=DpmConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    smart: SmartConfig = field(default_factory=SmartConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    cond: CondConfig = field(default_factory=CondConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)

    def validate(self) -> bool:
        """Validate the complete configuration.

        Returns:
            True if configuration is valid

        Raises:
            ConfigurationError: naming the key that holds the bad value
        """
        self._validate_counts()
        self._validate_rates()
        self._validate_schedule()
        self._validate_smart()
        return True

    def _validate_counts(self) -> None:
        if self.seed < 0:
            raise create_config_error('seed', "must be a non-negative integer")
        positive = {
            'dpm.batch': self.dpm.batch,
            'gan.latent_dim': self.gan.latent_dim,
            'gan.batch': self.gan.batch,
            'eval.interval': self.eval.interval,
            'eval.samples': self.eval.samples,
            'eval.shards': self.eval.shards,
            'refine.steps': self.refine.steps,
            'refine.samples': self.refine.samples,
        }
        for key, value in positive.items():
            if value < 1:
                raise create_config_error(key, f"must be >= 1, got {value}")
        # zero iterations is a valid dry run
        for key, value in (('dpm.iters', self.dpm.iters), ('gan.iters', self.gan.iters)):
            if value < 0:
                raise create_config_error(key, f"must be >= 0, got {value}")

    def _validate_rates(self) -> None:
        for key, value in (('dpm.lr', self.dpm.lr), ('dpm.lr_final', self.dpm.lr_final),
                           ('gan.lr_g', self.gan.lr_g), ('gan.lr_d', self.gan.lr_d),
                           ('smart.lr', self.smart.lr), ('eval.tau', self.eval.tau)):
            if not value > 0:
                raise create_config_error(key, f"must be positive, got {value}")
        for key, value in (('dpm.adam_beta1', self.dpm.adam_beta1),
                           ('dpm.adam_beta2', self.dpm.adam_beta2),
                           ('gan.adam_beta1', self.gan.adam_beta1),
                           ('gan.adam_beta2', self.gan.adam_beta2)):
            if not 0.0 <= value < 1.0:
                raise create_config_error(key, f"must lie in [0, 1), got {value}")
        if not self.adam_eps > 0:
            raise create_config_error('adam_eps', "must be positive")
        if not 0.0 < self.data.sigma <= 0.1:
            raise create_config_error('data.sigma',
                                      f"must lie in (0, 0.1] (a tenth of the grid spacing), got {self.data.sigma}")

    def _validate_schedule(self) -> None:
        if self.dpm.T < 1:
            raise create_config_error('dpm.T', f"must be >= 1, got {self.dpm.T}")
        if not 0.0 < self.dpm.beta_start <= self.dpm.beta_end < 1.0:
            key = 'dpm.beta_start' if not 0.0 < self.dpm.beta_start < 1.0 else 'dpm.beta_end'
            raise create_config_error(key, "need 0 < beta_start <= beta_end < 1")
        if not 1 <= self.eval.ddim_steps <= self.dpm.T:
            raise create_config_error('eval.ddim_steps', f"must lie in [1, {self.dpm.T}]")
        if not 1 <= self.refine.t <= self.dpm.T:
            raise create_config_error('refine.t', f"must lie in [1, {self.dpm.T}]")

    def _validate_smart(self) -> None:
        smart = self.smart
        if smart.freq < 1:
            raise create_config_error('smart.freq', f"must be >= 1, got {smart.freq}")
        if smart.lambda_score < 0:
            raise create_config_error('smart.lambda', f"must be >= 0, got {smart.lambda_score}")
        if not 1 <= smart.t_lo <= self.dpm.T:
            raise create_config_error('smart.t_lo', f"must lie in [1, {self.dpm.T}]")
        if not smart.t_lo <= smart.t_hi <= self.dpm.T:
            raise create_config_error('smart.t_hi', f"must lie in [{smart.t_lo}, {self.dpm.T}]")

    def to_flat(self) -> Dict[str, Any]:
        """Render the effective configuration with its flat keys."""
        flat = {}
        for key, (section, attr, _) in CONFIG_KEYS.items():
            holder = getattr(self, section) if section else self
            value = getattr(holder, attr)
            flat[key] = value.value if isinstance(value, Enum) else value
        return flat


# flat key -> (section attribute or None, field name, type)
CONFIG_KEYS: Dict[str, Tuple[Optional[str], str, Type]] = {
    'seed': (None, 'seed', int),
    'adam_eps': (None, 'adam_eps', float),
    'data.sigma': ('data', 'sigma', float),
    'dpm.T': ('dpm', 'T', int),
    'dpm.beta_start': ('dpm', 'beta_start', float),
    'dpm.beta_end': ('dpm', 'beta_end', float),
    'dpm.iters': ('dpm', 'iters', int),
    'dpm.lr': ('dpm', 'lr', float),
    'dpm.lr_final': ('dpm', 'lr_final', float),
    'dpm.batch': ('dpm', 'batch', int),
    'dpm.adam_beta1': ('dpm', 'adam_beta1', float),
    'dpm.adam_beta2': ('dpm', 'adam_beta2', float),
    'gan.latent_dim': ('gan', 'latent_dim', int),
    'gan.lr_g': ('gan', 'lr_g', float),
    'gan.lr_d': ('gan', 'lr_d', float),
    'gan.batch': ('gan', 'batch', int),
    'gan.iters': ('gan', 'iters', int),
    'gan.adam_beta1': ('gan', 'adam_beta1', float),
    'gan.adam_beta2': ('gan', 'adam_beta2', float),
    'smart.enabled': ('smart', 'enabled', bool),
    'smart.lambda': ('smart', 'lambda_score', float),
    'smart.t_lo': ('smart', 't_lo', int),
    'smart.t_hi': ('smart', 't_hi', int),
    'smart.freq': ('smart', 'freq', int),
    'smart.jacobian': ('smart', 'jacobian', JacobianMode),
    'smart.fresh_latents': ('smart', 'fresh_latents', bool),
    'smart.separate_moments': ('smart', 'separate_moments', bool),
    'smart.lr': ('smart', 'lr', float),
    'eval.interval': ('eval', 'interval', int),
    'eval.samples': ('eval', 'samples', int),
    'eval.tau': ('eval', 'tau', float),
    'eval.shards': ('eval', 'shards', int),
    'eval.ddim_steps': ('eval', 'ddim_steps', int),
    'cond.enabled': ('cond', 'enabled', bool),
    'refine.t': ('refine', 't', int),
    'refine.steps': ('refine', 'steps', int),
    'refine.samples': ('refine', 'samples', int),
}


def _coerce_value(raw: str, target: Type, key: str, line_number: int) -> Any:
    """Parse a raw config value and coerce it to the field type.

    Raises:
        ConfigurationError: If the value cannot represent the field type
    """
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise create_config_error(key, f"unparseable value {raw!r}: {e}", line_number)

    def reject() -> ConfigurationError:
        return create_config_error(key, f"expected {target.__name__}, got {raw!r}", line_number)

    if target is bool:
        if not isinstance(value, bool):
            raise reject()
        return value
    if target is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise reject()
        return value
    if target is float:
        if isinstance(value, bool):
            raise reject()
        if isinstance(value, (int, float)):
            return float(value)
        # PyYAML reads exponents without a dot (1e-4) as strings
        try:
            return float(str(value))
        except ValueError:
            raise reject()
    if issubclass(target, Enum):
        try:
            return target(str(value).lower())
        except ValueError:
            choices = '|'.join(m.value for m in target)
            raise create_config_error(key, f"expected one of {choices}, got {raw!r}", line_number)
    raise reject()


def parse_config(path: Optional[str] = None) -> TrainConfig:
    """Load a flat ``key = value`` configuration file.

    Missing keys keep their documented defaults; ``#`` starts a comment.

    Args:
        path: Config file path, or None for all defaults

    Returns:
        Validated TrainConfig

    Raises:
        ConfigurationError: On unknown keys, unparseable values or violated
            invariants; the message names the offending line
    """
    config = TrainConfig()
    if path is None:
        config.validate()
        return config

    config_file = Path(path)
    if not config_file.exists():
        raise ConfigurationError(f"Configuration file not found: {path}")

    key_lines: Dict[str, int] = {}
    with open(config_file, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            content = line.split('#', 1)[0].strip()
            if not content:
                continue
            if '=' not in content:
                raise ConfigurationError(f"expected 'key = value', got {content!r}", line_number)

            key, raw = (part.strip() for part in content.split('=', 1))
            if key not in CONFIG_KEYS:
                raise create_config_error(key, "unknown key", line_number)
            if key in key_lines:
                raise create_config_error(key, f"duplicate key (first set on line {key_lines[key]})",
                                          line_number)
            if not raw:
                raise create_config_error(key, "missing value", line_number)

            section, attr, target = CONFIG_KEYS[key]
            holder = getattr(config, section) if section else config
            setattr(holder, attr, _coerce_value(raw, target, key, line_number))
            key_lines[key] = line_number

    try:
        config.validate()
    except ConfigurationError as e:
        key = e.context.get('key')
        if key in key_lines:
            raise create_config_error(key, str(e).split(': ', 1)[-1], key_lines[key]) from e
        raise
    return config


def load_logging_config() -> LoggingConfig:
    """Load logging configuration from environment variables."""
    log_format = os.getenv("LOG_FORMAT", "%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    # Handle special format keywords
    if log_format.lower() == "json":
        log_format = '{"timestamp": "%(asctime)s", "logger": "%(name)s", "level": "%(levelname)s", "message": "%(message)s"}'
    elif log_format.lower() == "simple":
        log_format = "%(levelname)s - %(message)s"

    logging_config = LoggingConfig(level=os.getenv("LOG_LEVEL", "INFO").upper(), format=log_format)

    valid_levels = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']
    if logging_config.level not in valid_levels:
        raise ConfigurationError(f"Logging level must be one of: {', '.join(valid_levels)}")
    return logging_config
