import re
import os
from typing import Optional, List, Dict, Any, Literal
from os.path import expandvars
from itertools import chain

from pydantic import (
    BaseModel,
    BaseSettings,
    PositiveInt,
    PositiveFloat,
    Field,
    conint,
    confloat,
    validator,
    root_validator,
)

from . import consts

__all__ = [
    "AppConfig",
    "Defaults",
    "PropensitySpec",
    "InfluenceSpec",
    "SimulationSpec",
    "ColumnSchema",
    "TestSettings",
]

_var_re = re.compile(
    r"\${(?P<bname>[a-z0-9_]+)}" r"|" r"\$(?P<name>[^{][a-z_0-9]+)", flags=re.IGNORECASE
)

MultiplierLaw = Literal["mammen", "rademacher"]
GridMode = Literal["sample-pairs", "full-product"]
ProcessKind = Literal["dte", "cate", "hom", "ldte"]
StatisticType = Literal["ks", "cvm"]
RiskSet = Literal["arm", "sample"]
Gamma0Form = Literal["exp", "product"]
PropensityCorrection = Literal["projected", "series"]

Probability = confloat(gt=0, lt=1)


class NoExtraBaseModel(BaseModel):
    class Config:
        extra = "forbid"


class EnvExpand(str):
    """
    When a string value contains a reference to an environment variable, use
    this type to expand the contents of the variable using os.path.expandvars.

    For example like:
        input = "$STUDY_DIR/illinois.csv"

    will be expanded, given STUDY_DIR is set to '/data' in the environment:
        input -> "/data/illinois.csv"
    """

    @classmethod
    def __get_validators__(cls):
        yield cls.validate

    @classmethod
    def validate(cls, v):
        if found_vars := list(filter(len, chain.from_iterable(_var_re.findall(v)))):
            for var in found_vars:
                if (var_val := os.getenv(var)) is None:
                    raise ValueError(f'Environment variable "{var}" missing.')

                if not len(var_val):
                    raise ValueError(f'Environment variable "{var}" empty.')

            return expandvars(v)

        return v


def _sorted_levels(value: List[float]) -> List[float]:
    if not value:
        raise ValueError("at least one significance level required")
    return sorted(set(value))


class Defaults(NoExtraBaseModel, BaseSettings):
    B: PositiveInt = Field(consts.DEFAULT_B, env="KMTE_B")
    seed: conint(ge=0) = Field(consts.DEFAULT_SEED, env="KMTE_SEED")
    alpha_levels: List[Probability] = Field(list(consts.DEFAULT_ALPHA_LEVELS))
    level: Probability = Field(consts.DEFAULT_LEVEL)
    multiplier: MultiplierLaw = Field(consts.DEFAULT_MULTIPLIER)
    grid: GridMode = Field(consts.DEFAULT_GRID_MODE)
    max_grid_points: PositiveInt = Field(consts.DEFAULT_MAX_GRID_POINTS)
    threads: PositiveInt = Field(consts.DEFAULT_THREADS, env="KMTE_THREADS")
    smooth_pvalue: bool = False
    input: Optional[EnvExpand] = Field(None, env="KMTE_INPUT")

    _levels = validator("alpha_levels", allow_reuse=True)(_sorted_levels)


class PropensitySpec(NoExtraBaseModel):
    degree: Optional[conint(ge=0)]
    tol: PositiveFloat = Field(consts.DEFAULT_TOL)
    max_iter: PositiveInt = Field(consts.DEFAULT_MAX_ITER)
    clip_epsilon: confloat(gt=0, lt=0.5) = Field(consts.DEFAULT_CLIP_EPSILON)
    ridge_retries: conint(ge=0) = Field(consts.DEFAULT_RIDGE_RETRIES)
    overlap_warn: confloat(ge=0, lt=0.5) = Field(consts.DEFAULT_OVERLAP_WARN)


class InfluenceSpec(NoExtraBaseModel):
    risk_set: RiskSet = Field(consts.DEFAULT_RISK_SET)
    gamma0_form: Gamma0Form = Field(consts.DEFAULT_GAMMA0_FORM)
    series_degree: Optional[conint(ge=0)]
    gram_ridge: PositiveFloat = Field(consts.DEFAULT_GRAM_RIDGE)
    chunk_columns: PositiveInt = Field(consts.DEFAULT_CHUNK_COLUMNS)
    hom_ate_correction: bool = True
    propensity_correction: PropensityCorrection = Field(
        consts.DEFAULT_PROPENSITY_CORRECTION
    )


class SimulationSpec(NoExtraBaseModel):
    calibration_draws: PositiveInt = Field(consts.DEFAULT_CALIBRATION_DRAWS)
    calibration_seed: conint(ge=0) = Field(consts.DEFAULT_CALIBRATION_SEED)
    calibration_tolerance: confloat(gt=0, lt=1) = Field(
        consts.DEFAULT_CALIBRATION_TOLERANCE
    )
    out_dir: Optional[EnvExpand]


class ColumnSchema(NoExtraBaseModel):
    """ Header names locating each observation field in a CSV file """

    q: str = "q"
    delta: str = "delta"
    t: str = "t"
    x: List[str]
    z: Optional[str]

    @validator("x")
    def _covariates_given(cls, value):  # noqa
        if not value:
            raise ValueError("at least one covariate column required")
        return value

    @root_validator(skip_on_failure=True)
    def _distinct_columns(cls, values):  # noqa
        names = [values["q"], values["delta"], values["t"], *values["x"]]
        if values.get("z"):
            names.append(values["z"])

        if len(set(names)) != len(names):
            dups = sorted({name for name in names if names.count(name) > 1})
            raise ValueError(f"column used more than once: {', '.join(dups)}")

        return values

    @property
    def field_names(self) -> List[str]:
        names = [self.q, self.delta, self.t, *self.x]
        return names + [self.z] if self.z else names


class AppConfig(NoExtraBaseModel):
    defaults: Defaults
    propensity: PropensitySpec = PropensitySpec()
    influence: InfluenceSpec = InfluenceSpec()
    simulation: SimulationSpec = SimulationSpec()
    columns: Optional[ColumnSchema]
    logging: Optional[Dict]


class TestSettings(NoExtraBaseModel):
    """
    The resolved settings of one test run: configuration file values with
    command line overrides applied.
    """

    __test__ = False

    kind: ProcessKind = "dte"
    stats: List[StatisticType] = ["ks", "cvm"]
    tau_bar: Optional[float]
    degree: Optional[conint(ge=0)]
    grid_columns: Optional[List[str]]

    B: PositiveInt = consts.DEFAULT_B
    seed: conint(ge=0) = consts.DEFAULT_SEED
    alpha_levels: List[Probability] = list(consts.DEFAULT_ALPHA_LEVELS)
    level: Probability = consts.DEFAULT_LEVEL
    multiplier: MultiplierLaw = consts.DEFAULT_MULTIPLIER
    grid: GridMode = consts.DEFAULT_GRID_MODE
    max_grid_points: PositiveInt = consts.DEFAULT_MAX_GRID_POINTS
    threads: PositiveInt = consts.DEFAULT_THREADS
    smooth_pvalue: bool = False

    tol: PositiveFloat = consts.DEFAULT_TOL
    max_iter: PositiveInt = consts.DEFAULT_MAX_ITER
    clip_epsilon: confloat(gt=0, lt=0.5) = consts.DEFAULT_CLIP_EPSILON
    ridge_retries: conint(ge=0) = consts.DEFAULT_RIDGE_RETRIES
    overlap_warn: confloat(ge=0, lt=0.5) = consts.DEFAULT_OVERLAP_WARN

    risk_set: RiskSet = consts.DEFAULT_RISK_SET
    gamma0_form: Gamma0Form = consts.DEFAULT_GAMMA0_FORM
    series_degree: Optional[conint(ge=0)]
    gram_ridge: PositiveFloat = consts.DEFAULT_GRAM_RIDGE
    chunk_columns: PositiveInt = consts.DEFAULT_CHUNK_COLUMNS
    hom_ate_correction: bool = True
    propensity_correction: PropensityCorrection = consts.DEFAULT_PROPENSITY_CORRECTION

    _levels = validator("alpha_levels", allow_reuse=True)(_sorted_levels)

    @validator("stats")
    def _unique_stats(cls, value):  # noqa
        if not value:
            raise ValueError("at least one statistic type required")
        return [stat for stat in consts.STATISTIC_TYPES if stat in value]

    @validator("tau_bar")
    def _finite_or_none(cls, value):  # noqa
        if value is not None and value == float("inf"):
            return None
        if value is not None and value != value:
            raise ValueError("tau_bar must be a number")
        return value

    @classmethod
    def from_config(cls, app_cfg: AppConfig, **overrides: Any) -> "TestSettings":
        """
        Merge the configuration sections with the given overrides; an
        override whose value is None leaves the configured value in place.
        """
        values: Dict[str, Any] = {}
        values.update(app_cfg.defaults.dict(exclude={"input"}))
        values.update(app_cfg.propensity.dict())
        values.update(app_cfg.influence.dict())
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.parse_obj(values)

    @property
    def tau(self) -> float:
        return float("inf") if self.tau_bar is None else self.tau_bar
