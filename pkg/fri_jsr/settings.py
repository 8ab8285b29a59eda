# fri_jsr/settings.py
"""Runtime settings: environment overrides, logging setup and the YAML experiment config."""
import logging
import os
from dataclasses import dataclass, field, fields, replace
from typing import List, Optional, Union

import yaml

from .core_model import GridConfig, SparsityModel
from .errors import ConfigError
from .sparse_recovery import RecoveryConfig, TrainConfig

THREADS_ENV = "FRI_JSR_THREADS"
LOG_LEVEL_ENV = "FRI_JSR_LOG_LEVEL"

LOG_FORMAT = "[%(asctime)s] %(levelname)s %(name)s: %(message)s"
LOG_DATEFMT = "%H:%M:%S"


def thread_count() -> int:
    """Parallel-map width: FRI_JSR_THREADS if set and valid, else the CPU count."""
    raw = os.getenv(THREADS_ENV, "").strip()
    if raw:
        try:
            n = int(raw)
            if n >= 1:
                return n
        except ValueError:
            pass
        logging.getLogger(__name__).warning("ignoring invalid %s=%r", THREADS_ENV, raw)
    return os.cpu_count() or 1


def setup_logging(level: str = None) -> None:
    level = (level or os.getenv(LOG_LEVEL_ENV, "INFO")).upper()
    root = logging.getLogger()
    # keep repeated calls (tests, nested CLI invocations) from stacking handlers
    for h in list(root.handlers):
        if getattr(h, "_fri_jsr", False):
            root.removeHandler(h)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
    handler._fri_jsr = True
    root.addHandler(handler)
    root.setLevel(getattr(logging, level, logging.INFO))


# ---------------------------------------------------------------------------
# experiment config (YAML)
# ---------------------------------------------------------------------------

@dataclass
class DataConfig:
    q_train: int = 40000
    q_test: int = 2000
    seed: int = 0
    sparsity: List[List[int]] = field(default_factory=list)


@dataclass
class AnalogConfig:
    eps: float = 0.5
    n_count: Optional[int] = None


@dataclass
class SelectionConfig:
    # training examples scored per candidate by the G-FISTA empirical cost
    examples: int = 2000


@dataclass
class JsrConfig:
    P: int = 10
    base_seed: int = 0


@dataclass
class SweepConfig:
    methods: List[str] = field(default_factory=lambda: [
        "rand_fista", "g_crlb_fista", "g_fista_fista", "g_fista_lista", "jsr1", "jsr2"])
    ks: List[int] = field(default_factory=lambda: list(range(8, 16)))
    snrs: List[Union[str, float]] = field(default_factory=lambda: ["clean"])
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])


@dataclass
class CrossTestConfig:
    k: int = 10
    q_train: int = 20000
    q_test: int = 1000
    snr_db: Union[str, float] = "clean"
    datasets: List[List[List[int]]] = field(default_factory=lambda: [
        [[1, 10, 2], [21, 30, 3]],
        [[11, 20, 5]],
    ])


@dataclass
class ExperimentConfig:
    grid: GridConfig = field(default_factory=lambda: GridConfig(30, 5, 1.0))
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    analog: AnalogConfig = field(default_factory=AnalogConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    jsr: JsrConfig = field(default_factory=JsrConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    cross_test: CrossTestConfig = field(default_factory=CrossTestConfig)


def _section(default, raw, name: str):
    if raw is None:
        return default
    if not isinstance(raw, dict):
        raise ConfigError(f"config section '{name}' must be a mapping")
    known = {f.name for f in fields(default)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(unknown)}")
    try:
        return replace(default, **raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid '{name}' section: {e}") from e


def config_from_dict(raw: Optional[dict]) -> ExperimentConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a mapping at the top level")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    defaults = ExperimentConfig()
    cfg = ExperimentConfig(**{f.name: _section(getattr(defaults, f.name), raw.get(f.name), f.name)
                              for f in fields(ExperimentConfig)})
    if cfg.data.sparsity:
        try:
            SparsityModel.structured(cfg.data.sparsity).validate(cfg.grid)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid 'data.sparsity' blocks {cfg.data.sparsity!r}: {e}") from e
    return cfg


def load_config(path: Optional[str]) -> ExperimentConfig:
    """Read a YAML experiment config; missing sections and keys keep their defaults."""
    if not path:
        return ExperimentConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} is not valid YAML: {e}") from e
    return config_from_dict(raw)
