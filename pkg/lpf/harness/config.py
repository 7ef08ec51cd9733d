# lpf/harness/config.py

"""
Experiment configuration: one section per experiment plus the shared world,
decoder and bound-constant sections. Built-in defaults reproduce the standard
verification setups; a YAML file overrides any subset of them.
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from lpf.core.config import DEFAULT_SEED
from lpf.core.errors import ConfigError
from lpf.services.world import WorldConfig

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DecoderSection(_Section):
    temperature: float = Field(default=1.0, gt=0)
    floor: float = Field(default=0.5, ge=0, lt=1)


class ConstantsSection(_Section):
    """Bound constants echoed into every report"""

    C_cal: float = Field(default=2.0, gt=0)
    C_rob: float = Field(default=2.0, gt=0)
    C_sample: float = Field(default=24.28, gt=0)
    delta: float = Field(default=0.05, gt=0, lt=1)
    delta_item: float = Field(default=1.0, ge=0)


class T1Section(_Section):
    n_test: int = Field(default=300, ge=2)
    K: int = Field(default=10, ge=1)
    M: int = Field(default=16, ge=1)
    n_train_learned: int = Field(default=500, ge=1)
    epochs: int = Field(default=30, ge=0)


class T2Section(_Section):
    M_values: List[int] = Field(default_factory=lambda: [4, 8, 16, 32, 64], min_length=1)
    trials: int = Field(default=50, ge=1)
    posteriors: int = Field(default=20, ge=1)
    d: int = Field(default=2, ge=2, le=3)
    order: int = Field(default=48, ge=20)
    min_trial_fraction: float = Field(default=0.95, ge=0, le=1)


class T3Section(_Section):
    N_values: List[int] = Field(default_factory=lambda: [2002, 3003, 4200], min_length=1)
    n_test: int = Field(default=900, ge=1)
    seeds: int = Field(default=5, ge=1)
    K: int = Field(default=5, ge=1)
    hidden: int = Field(default=16, ge=1)
    conflict_rate: float = Field(default=0.05, ge=0, le=1)
    floor: float = Field(default=0.05, ge=0, lt=1)
    d_eff_fixed: int = Field(default=1335, ge=1)
    epochs: int = Field(default=30, ge=0)
    learning_rate: float = Field(default=0.05, gt=0)
    batch_size: int = Field(default=128, ge=1)
    l2_lambda: float = Field(default=1e-4, ge=0)
    threshold: float = Field(default=1e-3, ge=0)


class T4Section(_Section):
    n_entities: int = Field(default=100, ge=2)
    K: int = Field(default=5, ge=1)
    M: int = Field(default=16, ge=1)
    slack: float = Field(default=1.5, gt=0)


class T5Section(_Section):
    epsilons: List[float] = Field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2, 0.3, 0.5], min_length=1)
    trials: int = Field(default=10, ge=1)
    n_entities: int = Field(default=100, ge=1)
    K: int = Field(default=10, ge=1)
    M: int = Field(default=16, ge=1)
    tolerance: float = Field(default=1e-3, ge=0)


class T6Section(_Section):
    K_values: List[int] = Field(default_factory=lambda: [1, 2, 3, 5, 7, 10, 15, 20], min_length=3)
    trials: int = Field(default=20, ge=1)
    n_entities: int = Field(default=100, ge=1)
    M: int = Field(default=16, ge=1)
    r2_min: float = Field(default=0.8)


class T7Section(_Section):
    K_values: List[int] = Field(default_factory=lambda: [1, 2, 3, 5], min_length=1)
    n_entities: int = Field(default=50, ge=1)
    M: int = Field(default=100, ge=2)
    max_error: float = Field(default=1e-6, gt=0)
    max_cv: float = Field(default=0.5, gt=0)


class AssumptionsSection(_Section):
    correlation_entities: int = Field(default=1000, ge=30)
    rho_max: float = Field(default=0.3, ge=0)
    calibration_items: int = Field(default=1000, ge=1)
    ece_max: float = Field(default=0.25, ge=0)
    closure_cases: int = Field(default=1000, ge=1)
    n_latents: int = Field(default=1000, ge=1)
    norm_entities: int = Field(default=1000, ge=1)
    M: int = Field(default=16, ge=1)


class ExperimentConfig(_Section):
    seed: int = Field(default=DEFAULT_SEED, ge=0, lt=2**64)
    out_dir: str = "lpf-out"
    world: WorldConfig = Field(default_factory=WorldConfig)
    decoder: DecoderSection = Field(default_factory=DecoderSection)
    constants: ConstantsSection = Field(default_factory=ConstantsSection)
    t1: T1Section = Field(default_factory=T1Section)
    t2: T2Section = Field(default_factory=T2Section)
    t3: T3Section = Field(default_factory=T3Section)
    t4: T4Section = Field(default_factory=T4Section)
    t5: T5Section = Field(default_factory=T5Section)
    t6: T6Section = Field(default_factory=T6Section)
    t7: T7Section = Field(default_factory=T7Section)
    assumptions: AssumptionsSection = Field(default_factory=AssumptionsSection)

    def world_config(self, **overrides: Any) -> WorldConfig:
        """World section with the run seed and per-experiment overrides applied"""
        values = self.world.model_dump()
        values.update(seed=self.seed, **overrides)
        return WorldConfig(**values)


# ============= LOADING =============


def _drop_unknown(data: Dict[str, Any], model: type, prefix: str = "") -> Dict[str, Any]:
    """Warn about and remove keys the model does not define, recursing into sections"""
    clean = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        field = model.model_fields.get(key)
        if field is None:
            logger.warning(f"unknown config key '{dotted}' ignored")
            continue
        annotation = field.annotation
        if isinstance(value, dict) and isinstance(annotation, type) and issubclass(annotation, BaseModel):
            value = _drop_unknown(value, annotation, prefix=f"{dotted}.")
        clean[key] = value
    return clean


def parse_config(data: Optional[Dict[str, Any]], source: str = "<config>") -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping of sections")
    try:
        return ExperimentConfig.model_validate(_drop_unknown(data, ExperimentConfig))
    except ValidationError as e:
        first = e.errors()[0]
        dotted = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"{source}: invalid value for '{dotted}': {first['msg']}") from e


def load_config(path: Union[str, Path, None] = None) -> ExperimentConfig:
    """
    Read a YAML config file; values override the built-in defaults
    """
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}: malformed config{where}: {e}") from e
    return parse_config(data, source=str(path))
