"""
mctailor Configuration Module

Run configuration from layered sources, lowest precedence first:

    built-in defaults < config file (--config) < MCTAILOR_* environment
    variables < command-line overrides

Config files are flat key=value text (python-dotenv syntax); keys are the
lower-case RunConfig field names. Unknown keys are rejected.
"""

from __future__ import annotations
from typing import Any, Dict, List, Mapping, Optional
from enum import Enum
import hashlib
import os

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .core.metrics import EvalLMConfig
from .core.ratio import EstimatorConfig
from .schemas.errors import UsageError
from .schemas.sampling import SamplingAlgorithm


ENV_PREFIX = "MCTAILOR_"

# Fields that change where or how output is shown, not what is computed.
PRESENTATION_FIELDS = {"out_dir", "json_output", "log_level", "store_backend", "workers"}


class StoreBackend(str, Enum):
    """Supported artifact backends."""
    FILE = "file"
    MEMORY = "memory"


class RunConfig(BaseModel):
    """Every tunable of a pipeline run."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    # Paths
    general_corpus: Optional[str] = None
    domain_corpus: Optional[str] = None
    out_dir: str = "runs/default"

    # Corpus
    max_len: int = Field(default=20, ge=1, le=64)
    min_count: int = Field(default=1, ge=1)
    lowercase: bool = False
    split_train: float = Field(default=0.8, gt=0.0, le=1.0)
    split_eval: float = Field(default=0.1, ge=0.0, lt=1.0)
    split_test: float = Field(default=0.1, ge=0.0, lt=1.0)

    # Language model
    order: int = Field(default=3, ge=1, le=6)
    alpha: float = Field(default=0.1, gt=0.0)
    lambdas: Optional[List[float]] = None
    mu: float = Field(default=0.5, ge=0.0, le=1.0)
    tune_mu: bool = False

    # Ratio estimators
    n_layers: int = Field(default=1, ge=1, le=10)
    gamma_max: float = Field(default=20.0, gt=1.0)
    lr: float = Field(default=0.05, gt=0.0)
    patience: int = Field(default=5, ge=1)
    max_epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=32, ge=2)
    embed_dim: int = Field(default=16, ge=1)
    dual: bool = True
    dual_temperature: Optional[float] = Field(default=None, gt=0.0)
    min_real: int = Field(default=100, ge=1)

    # Sampling
    algorithm: SamplingAlgorithm = SamplingAlgorithm.ERS
    n_samples: int = Field(default=1000, ge=1)
    budget: int = Field(default=10_000_000, ge=1)
    n_is: int = Field(default=10_000, ge=1000)
    ers_final_check: bool = True
    workers: int = Field(default=1, ge=1, le=64)

    # Evaluation
    rev_order: int = Field(default=2, ge=1, le=6)
    rev_alpha: float = Field(default=0.1, gt=0.0)
    nll_sentences: str = ""

    # Verification
    verify_samples: int = Field(default=1_000_000, ge=1000)
    verify_tv_threshold: float = Field(default=0.01, gt=0.0, le=1.0)
    verify_p_threshold: float = Field(default=0.01, gt=0.0, lt=1.0)
    verify_max_forced_mass: Optional[float] = Field(default=None, gt=0.0, le=1.0)

    # Run
    seed: int = Field(default=0, ge=0)
    json_output: bool = False
    log_level: str = "INFO"
    store_backend: StoreBackend = StoreBackend.FILE

    @field_validator("lambdas", mode="before")
    @classmethod
    def parse_lambdas(cls, v: Any) -> Any:
        if isinstance(v, str):
            v = v.strip()
            return [float(x) for x in v.split(",")] if v else None
        return v

    @field_validator("log_level")
    @classmethod
    def known_level(cls, v: str) -> str:
        level = v.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level {v}")
        return level

    @model_validator(mode="after")
    def check_consistency(self) -> "RunConfig":
        total = self.split_train + self.split_eval + self.split_test
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {total}")
        if self.lambdas is not None:
            if len(self.lambdas) != self.order:
                raise ValueError(f"lambdas needs {self.order} weights, got {len(self.lambdas)}")
            if any(x < 0 for x in self.lambdas) or abs(sum(self.lambdas) - 1.0) > 1e-9:
                raise ValueError("lambdas must be non-negative and sum to 1")
        return self

    # =========================================================================
    # Derived settings
    # =========================================================================

    @property
    def fractions(self) -> tuple:
        return (self.split_train, self.split_eval, self.split_test)

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(
            embed_dim=self.embed_dim,
            gamma_max=self.gamma_max,
            lr=self.lr,
            patience=self.patience,
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            dual_temperature=self.dual_temperature,
            min_real=self.min_real,
        )

    def eval_lm_config(self) -> EvalLMConfig:
        return EvalLMConfig(order=self.rev_order, alpha=self.rev_alpha)

    def fingerprint(self) -> str:
        """Short digest of every field that affects computed results."""
        payload = self.model_dump_json(exclude=PRESENTATION_FIELDS)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _read_file(path: str) -> Dict[str, str]:
    if not os.path.isfile(path):
        raise UsageError("E_CONFIG_MISSING", f"Config file {path} does not exist")
    values = dotenv_values(path)
    out = {}
    for key, value in values.items():
        if value is None:
            raise UsageError("E_CONFIG_SYNTAX", f"Config key {key!r} in {path} has no value")
        out[key.lower()] = value
    return out


def _read_env(environ: Mapping[str, str]) -> Dict[str, str]:
    out = {}
    for name in RunConfig.model_fields:
        key = ENV_PREFIX + name.upper()
        if key in environ:
            out[name] = environ[key]
    return out


def load_config(
    path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """
    Build a RunConfig from file, environment and explicit overrides.

    Environment Variables:
        MCTAILOR_<FIELD>: any RunConfig field, e.g. MCTAILOR_SEED=7

    Raises:
        UsageError: unknown keys, unparsable values or out-of-range numbers
    """
    values: Dict[str, Any] = {}
    if path:
        values.update(_read_file(path))
    values.update(_read_env(os.environ if environ is None else environ))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    try:
        return RunConfig(**values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}"
            for err in e.errors()
        )
        raise UsageError("E_CONFIG_INVALID", f"Invalid configuration: {problems}") from e


# Singleton config instance
_config: Optional[RunConfig] = None


def get_config() -> RunConfig:
    """Get the global configuration (lazy-loaded singleton)."""
    global _config
    if _config is None:
        _config = load_config()
    return _config


def set_config(config: RunConfig) -> None:
    global _config
    _config = config


def reset_config() -> None:
    """Reset configuration (useful for testing)."""
    global _config
    _config = None
