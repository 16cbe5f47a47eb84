"""
config.py

Experiment configuration.
- Documented defaults for every key
- Layering: defaults < IFCAE_<KEY> environment variables < config file < --set overrides
- Config files are dotenv-style key=value text; list values are comma separated
- The effective configuration is echoed into every run directory
"""

import logging
import os
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Dict, Iterable, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values, load_dotenv, set_key

from errors import ConfigurationError
from evaluation import DEFAULT_EVAL_SNRS_DB, MISMATCH_EVAL_ALPHAS, StopRule
from models import ArchitectureSpec
from training import TrainingConfig


ENV_PREFIX = "IFCAE_"
ECHO_FILENAME = "effective_config.env"

logger = logging.getLogger("Config")


@dataclass(frozen=True)
class ExperimentConfig:
    """Training settings, evaluation grids, stop rule and run options. Validated on construction."""

    k: int = 4
    n: int = 8
    encoder_hidden: int = 32
    decoder_hidden: int = 64
    power_mode: str = "batch_average"
    model_kind: str = "twin"
    alpha: float = 1.0
    snr_range_db: Tuple[float, float] = (1.0, 12.0)
    epochs: int = 200
    batches_per_epoch: int = 200
    batch_size: int = 256
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr_decay: float = 0.1
    lr_decay_at: Tuple[float, ...] = (0.6, 0.85)
    seed: int = 0
    eval_snrs_db: Tuple[float, ...] = DEFAULT_EVAL_SNRS_DB
    mismatch_alphas: Tuple[float, ...] = MISMATCH_EVAL_ALPHAS
    min_errors: int = 200
    max_frames: int = 2_000_000
    chunk_frames: int = 10_000
    out_dir: str = "output"
    threads: int = 1

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}", key="seed")
        if self.threads < 1:
            raise ConfigurationError(f"threads must be >= 1, got {self.threads}", key="threads")
        if not self.eval_snrs_db:
            raise ConfigurationError("eval_snrs_db must not be empty", key="eval_snrs_db")
        if len(set(self.eval_snrs_db)) != len(self.eval_snrs_db):
            raise ConfigurationError("eval_snrs_db contains duplicates", key="eval_snrs_db")
        if not self.mismatch_alphas:
            raise ConfigurationError("mismatch_alphas must not be empty", key="mismatch_alphas")
        if len(set(self.mismatch_alphas)) != len(self.mismatch_alphas):
            raise ConfigurationError("mismatch_alphas contains duplicates", key="mismatch_alphas")
        if any(alpha < 0 for alpha in self.mismatch_alphas):
            raise ConfigurationError("mismatch_alphas must be >= 0", key="mismatch_alphas")
        if not self.out_dir:
            raise ConfigurationError("out_dir must not be empty", key="out_dir")
        # the derived objects carry the remaining range checks
        self.training_config()
        self.stop_rule()

    def arch(self) -> ArchitectureSpec:
        return ArchitectureSpec(k=self.k, n=self.n, encoder_hidden=self.encoder_hidden,
                                decoder_hidden=self.decoder_hidden, power_mode=self.power_mode)

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(model_kind=self.model_kind, alpha=self.alpha, snr_range_db=self.snr_range_db,
                              epochs=self.epochs, batches_per_epoch=self.batches_per_epoch,
                              batch_size=self.batch_size, optimizer=self.optimizer,
                              learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
                              epsilon=self.epsilon, lr_decay=self.lr_decay, lr_decay_at=self.lr_decay_at,
                              seed=self.seed, arch=self.arch())

    def stop_rule(self) -> StopRule:
        return StopRule(min_errors=self.min_errors, max_frames=self.max_frames, chunk_frames=self.chunk_frames)

    def as_strings(self) -> Dict[str, str]:
        """Key -> text form that parses back to the same value."""
        return {key: format_value(value) for key, value in asdict(self).items()}


# -------------------------------------------------------------
# Value parsing
# -------------------------------------------------------------

def _parse_int(text: str) -> int:
    return int(text.strip())


def _parse_float(text: str) -> float:
    return float(text.strip())


def _parse_str(text: str) -> str:
    return text.strip()


def _parse_float_list(text: str) -> Tuple[float, ...]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    return tuple(float(item) for item in items)


def _parse_float_pair(text: str) -> Tuple[float, float]:
    values = _parse_float_list(text)
    if len(values) != 2:
        raise ValueError(f"expected two comma-separated numbers, got {len(values)}")
    return values


_PARSERS: Dict[str, Callable[[str], object]] = {}
for _field in fields(ExperimentConfig):
    if _field.name == "snr_range_db":
        _PARSERS[_field.name] = _parse_float_pair
    elif _field.name in ("eval_snrs_db", "mismatch_alphas", "lr_decay_at"):
        _PARSERS[_field.name] = _parse_float_list
    elif _field.type in (int, "int"):
        _PARSERS[_field.name] = _parse_int
    elif _field.type in (float, "float"):
        _PARSERS[_field.name] = _parse_float
    else:
        _PARSERS[_field.name] = _parse_str

CONFIG_KEYS = tuple(_PARSERS)


def format_value(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(key: str, text: Optional[str], source: str):
    if key not in _PARSERS:
        logger.error(f"Unknown configuration key '{key}' in {source}")
        raise ConfigurationError(f"Unknown configuration key '{key}' ({source})", key=key)
    if text is None:
        raise ConfigurationError(f"Key '{key}' has no value ({source})", key=key)
    try:
        return _PARSERS[key](text)
    except ValueError as e:
        logger.error(f"Cannot parse '{key}={text}' from {source}: {e}")
        raise ConfigurationError(f"Invalid value for '{key}': '{text}' ({source})", key=key) from e


def _split_override(item: str) -> Tuple[str, str]:
    if "=" not in item:
        raise ConfigurationError(f"Override '{item}' is not of the form key=value")
    key, _, value = item.partition("=")
    return key.strip(), value


def parse_config(path: Optional[Union[str, Path]] = None,
                 overrides: Union[Iterable[str], Mapping[str, str]] = (),
                 environ: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """
    Build a validated ExperimentConfig.

    Args:
        path: optional dotenv-style config file; must exist when given.
        overrides: "key=value" strings (or a mapping) applied last.
        environ: environment to read IFCAE_<KEY> variables from; defaults to
            os.environ after loading the project .env.
    Returns:
        ExperimentConfig with defaults filled in.
    Raises:
        ConfigurationError: unknown key, unparsable value or range violation.
    """
    if environ is None:
        load_dotenv()
        environ = os.environ
    values: Dict[str, object] = {}

    # environment only supplies known keys; other IFCAE_* variables are left alone
    for key in CONFIG_KEYS:
        env_name = f"{ENV_PREFIX}{key.upper()}"
        if env_name in environ:
            values[key] = _convert(key, environ[env_name], f"environment {env_name}")

    if path is not None:
        path = Path(path)
        if not path.is_file():
            logger.error(f"Config file not found: {path}")
            raise ConfigurationError(f"Config file not found: {path}")
        for key, text in dotenv_values(path).items():
            values[key] = _convert(key, text, str(path))

    items = overrides.items() if isinstance(overrides, Mapping) else (_split_override(o) for o in overrides)
    for key, text in items:
        values[key] = _convert(key, text, "override")

    config = ExperimentConfig(**values)
    logger.info(f"Configuration resolved ({len(values)} non-default key(s))")
    return config


def write_config_echo(config: ExperimentConfig, out_dir: Union[str, Path]) -> Path:
    """Write effective_config.env into out_dir atomically; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / ECHO_FILENAME
    handle, tmp_name = tempfile.mkstemp(prefix=".config-", suffix=".tmp", dir=out_dir)
    try:
        with os.fdopen(handle, "w", encoding="utf-8") as f:
            f.write("# Effective configuration of this run\n")
        for key, value in config.as_strings().items():
            set_key(tmp_name, key, value, quote_mode="never")
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    logger.info(f"Config echo written to {target}")
    return target
