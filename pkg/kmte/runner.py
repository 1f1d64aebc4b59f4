"""
The test pipeline shared by the `test` and `simulate` commands:

    propensity fit -> KM weights -> process -> influence matrix -> bootstrap

A FittedSample holds everything that does not depend on the test kind so
that several tests can be evaluated on one dataset with a single fit.
"""
import json
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field

from .bootstrap import BootstrapResult, bootstrap_tests
from .config_model import ProcessKind, StatisticType, TestSettings
from .influence import InfluenceMatrix, influence_matrix
from .kaplan_meier import OrderedSubsample, ordered_subsample
from .logger import get_logger
from .processes import (
    ProcessDesign,
    cate_design,
    cvm_values,
    dte_design,
    hom_design,
    ks_values,
    ldte_design,
)
from .propensity import LogitFit, build_power_basis, fit_for_degree
from .sample import (
    Dataset,
    EvaluationGrid,
    covariate_grid,
    default_grid,
    split_by_arm,
    split_by_arm_instrument,
)
from . import consts

__all__ = [
    "FittedSample",
    "TestOutcome",
    "StatisticResult",
    "TestReport",
    "prepare_sample",
    "evaluate_test",
    "run_test",
    "execute_test",
]


@dataclass(frozen=True)
class FittedSample:
    dataset: Dataset
    fit: LogitFit
    treated: OrderedSubsample
    control: OrderedSubsample
    qfit: Optional[LogitFit] = None
    cells: Optional[Dict] = None


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False

    design: ProcessDesign
    grid: EvaluationGrid
    statistics: Dict[str, float]
    psi: InfluenceMatrix
    results: Dict[str, BootstrapResult]

    def p_value(self, stat: str) -> float:
        return self.results[stat].p_value


def _fit_options(settings: TestSettings) -> Dict[str, Any]:
    return dict(
        tol=settings.tol,
        max_iter=settings.max_iter,
        clip_epsilon=settings.clip_epsilon,
        ridge_retries=settings.ridge_retries,
        overlap_warn=settings.overlap_warn,
    )


def prepare_sample(
    d: Dataset, settings: TestSettings, instrument: bool = False
) -> FittedSample:
    """
    Fit the treatment propensity, and with `instrument` the instrument
    propensity, then order and weight the arms (and the (t, z) cells).
    """
    treated, control = split_by_arm(d)
    cells = split_by_arm_instrument(d) if instrument else None

    fit = fit_for_degree(
        d.x, d.t, settings.degree, name="propensity", **_fit_options(settings)
    )
    qfit = None
    if instrument:
        qfit = fit_for_degree(
            d.x,
            d.z,
            settings.degree,
            name="instrument propensity",
            **_fit_options(settings),
        )

    return FittedSample(
        dataset=d,
        fit=fit,
        treated=ordered_subsample(treated),
        control=ordered_subsample(control),
        qfit=qfit,
        cells={key: ordered_subsample(cell) for key, cell in cells.items()}
        if cells
        else None,
    )


def _design(sample: FittedSample, kind: str, tau: float) -> ProcessDesign:
    n = sample.dataset.n
    if kind == "dte":
        return dte_design(sample.treated, sample.control, sample.fit, n, tau)
    if kind == "cate":
        return cate_design(sample.treated, sample.control, sample.fit, n, tau)
    if kind == "hom":
        return hom_design(sample.treated, sample.control, sample.fit, n, tau)
    return ldte_design(sample.cells, sample.qfit, n, tau_bar=tau)


def _grid(sample: FittedSample, kind: str, settings: TestSettings) -> EvaluationGrid:
    if kind in ("dte", "ldte"):
        return default_grid(
            sample.dataset,
            settings.tau,
            settings.grid,
            settings.grid_columns,
            settings.max_grid_points,
        )
    return covariate_grid(
        sample.dataset, settings.grid, settings.grid_columns, settings.max_grid_points
    )


def evaluate_test(
    sample: FittedSample,
    settings: TestSettings,
    kind: Optional[str] = None,
    stats: Optional[Sequence[str]] = None,
) -> TestOutcome:
    kind = kind or settings.kind
    stats = list(stats or settings.stats)
    d = sample.dataset
    n = d.n

    design = _design(sample, kind, settings.tau)
    grid = _grid(sample, kind, settings)
    values = design.values(grid, settings.chunk_columns)

    statistics = {}
    for stat in stats:
        if stat == "ks":
            statistics[stat] = float(ks_values(values, n))
        else:
            statistics[stat] = float(cvm_values(values, grid.counts, n))

    basis = None
    if settings.series_degree is not None:
        basis = build_power_basis(d.k, settings.series_degree)

    psi = influence_matrix(
        design,
        grid,
        d,
        sample.qfit if kind == "ldte" else sample.fit,
        basis=basis,
        risk_set=settings.risk_set,
        gamma0_form=settings.gamma0_form,
        gram_ridge=settings.gram_ridge,
        chunk_columns=settings.chunk_columns,
        threads=settings.threads,
        hom_ate_correction=settings.hom_ate_correction,
        propensity_correction=settings.propensity_correction,
    )

    results = bootstrap_tests(
        psi,
        statistics,
        B=settings.B,
        level=settings.level,
        seed=settings.seed,
        multiplier=settings.multiplier,
        alpha_levels=settings.alpha_levels,
        smooth_pvalue=settings.smooth_pvalue,
        threads=settings.threads,
    )

    return TestOutcome(
        design=design, grid=grid, statistics=statistics, psi=psi, results=results
    )


# -----------------------------------------------------------------------------
#
#                                    Report
#
# -----------------------------------------------------------------------------


class StatisticResult(BaseModel):
    statistic: float
    p_value: float = Field(..., ge=0, le=1)
    critical_values: Dict[str, float]
    level: float
    reject: bool
    smoothed: bool = False

    @classmethod
    def from_bootstrap(cls, result: BootstrapResult) -> "StatisticResult":
        return cls(
            statistic=result.statistic,
            p_value=result.p_value,
            critical_values={
                f"{lvl:g}": value for lvl, value in result.critical_values.items()
            },
            level=result.level,
            reject=result.reject,
            smoothed=result.smoothed,
        )


class TestReport(BaseModel):
    __test__ = False

    schema_version: str = consts.REPORT_SCHEMA_VERSION
    test: ProcessKind
    statistics: List[StatisticType]
    n: int
    n_treated: int
    n_control: int
    n_tz: Optional[Dict[str, int]]
    tau_bar: Optional[float]
    B: int
    seed: int
    multiplier: str
    grid: Dict[str, Any]
    propensity: Dict[str, Any]
    instrument_propensity: Optional[Dict[str, Any]]
    km_mass: Dict[str, float]
    influence: Dict[str, Any]
    ate: Optional[float]
    results: Dict[str, StatisticResult]
    elapsed_seconds: Optional[float]

    def as_json(self, timing: bool = False) -> str:
        exclude = None if timing else {"elapsed_seconds"}
        return json.dumps(self.dict(exclude=exclude), indent=2)


def run_test(d: Dataset, settings: TestSettings) -> TestReport:
    """ Run one test end to end and assemble its report """
    return execute_test(d, settings)[0]


def execute_test(
    d: Dataset, settings: TestSettings
) -> Tuple[TestReport, TestOutcome]:
    log = get_logger()
    start = time.monotonic()

    log.info(
        f"{settings.kind} test: n={d.n}, k={d.k}, B={settings.B}, "
        f"seed={settings.seed}, censored={d.censored_share:.1%}"
    )

    sample = prepare_sample(d, settings, instrument=settings.kind == "ldte")
    outcome = evaluate_test(sample, settings)
    grid = outcome.grid

    report = TestReport(
        test=settings.kind,
        statistics=list(outcome.statistics),
        n=d.n,
        n_treated=d.n_treated,
        n_control=d.n_control,
        n_tz={f"{t}{z}": count for (t, z), count in d.cell_sizes().items()}
        if settings.kind == "ldte"
        else None,
        tau_bar=settings.tau_bar,
        B=settings.B,
        seed=settings.seed,
        multiplier=settings.multiplier,
        grid=dict(
            mode=grid.mode,
            size=grid.size,
            columns=[d.covariate_names[col] for col in grid.columns],
        ),
        propensity=sample.fit.diagnostics(),
        instrument_propensity=sample.qfit.diagnostics() if sample.qfit else None,
        km_mass=outcome.design.km_mass(),
        influence=outcome.psi.diagnostics,
        ate=outcome.design.ate,
        results={
            stat: StatisticResult.from_bootstrap(result)
            for stat, result in outcome.results.items()
        },
        elapsed_seconds=round(time.monotonic() - start, 3),
    )
    return report, outcome
