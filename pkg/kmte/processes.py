"""
Kaplan-Meier weighted test processes and their KS / CvM functionals.

Every process is a signed sum of per-arm (or per treatment x instrument cell)
KM integrals,

    I(y, x) = sum_terms sign * (m / n) * sum_i W_i * phi(Q_i, X_i; y, x),

where phi is the inverse-propensity weighted response of the test times the
covariate indicator 1{X_i <= x}:

    dte, ldte   1{Q <= y} / pi(X)
    cate        Q 1{Q <= tau_bar} / pi(X)
    hom         Q 1{Q <= tau_bar} / pi(X) - (2t - 1) * ATE

A ProcessDesign holds the terms; the influence module reuses the same
description to build the estimated influence functions.
"""
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import DegenerateInstrumentError, GridError
from .kaplan_meier import OrderedSubsample, km_mass
from .propensity import LogitFit, predict_probabilities
from .sample import CELL_KEYS, FULL_PRODUCT, EvaluationGrid

__all__ = [
    "KMTerm",
    "ProcessDesign",
    "ProcessValues",
    "dte_design",
    "cate_design",
    "hom_design",
    "ldte_design",
    "dte_process",
    "cate_process",
    "ate_point",
    "hom_process",
    "ldte_process",
    "ks_statistic",
    "cvm_statistic",
    "ks_values",
    "cvm_values",
    "column_chunks",
]

OUTCOME_KINDS = ("dte", "ldte")
MEAN_KINDS = ("cate", "hom")

Propensity = Union[LogitFit, np.ndarray]


def column_chunks(size: int, chunk: int) -> List[slice]:
    return [slice(start, min(start + chunk, size)) for start in range(0, size, chunk)]


def _weighted(sub: OrderedSubsample) -> OrderedSubsample:
    return sub if sub.weights is not None else sub.with_weights()


def _probabilities(propensity: Propensity, sub: OrderedSubsample) -> np.ndarray:
    """
    P(D=1|X) at the ordered rows of `sub`: predicted by a fit, or taken from
    a vector aligned with the dataset rows.
    """
    if isinstance(propensity, LogitFit):
        return predict_probabilities(propensity, sub.x_sorted)[0]
    return np.asarray(propensity, dtype=float)[sub.original_index]


def _covariates_below(rows: np.ndarray, columns, xg: np.ndarray) -> np.ndarray:
    out = np.ones((rows.shape[0], xg.shape[0]), dtype=bool)
    for j, col in enumerate(columns):
        out &= rows[:, col][:, None] <= xg[None, :, j]
    return out


@dataclass(frozen=True)
class KMTerm:
    """
    One KM integral of a process.  `side` selects the inverse weight: 1 uses
    1/prob, 0 uses 1/(1 - prob), where prob is P(T=1|X) for the DTE, CATE
    and homogeneity processes and P(Z=1|X) for the LDTE process.
    """

    key: Tuple[int, ...]
    sub: OrderedSubsample
    sign: float
    prob: np.ndarray
    side: int
    offset: float = 0.0

    @property
    def label(self) -> str:
        names = ("t", "z")
        return ",".join(f"{names[i]}={v}" for i, v in enumerate(self.key))

    @property
    def propensity(self) -> np.ndarray:
        return self.prob if self.side == 1 else 1.0 - self.prob

    @property
    def inv_prob(self) -> np.ndarray:
        return 1.0 / self.propensity


@dataclass(frozen=True)
class ProcessDesign:
    kind: str
    terms: Tuple[KMTerm, ...]
    n: int
    tau_bar: float = float("inf")
    ate: Optional[float] = None

    def truncated_outcome(self, sub: OrderedSubsample) -> np.ndarray:
        """ q 1{q <= tau_bar} """
        return np.where(sub.q_sorted <= self.tau_bar, sub.q_sorted, 0.0)

    def response(
        self, term: KMTerm, grid: EvaluationGrid, cols: slice = slice(None)
    ) -> np.ndarray:
        """ the (m, n_cols) matrix phi(Q_i, X_i; y_g, x_g) for the term's rows """
        sub = term.sub
        below = _covariates_below(sub.x_sorted, grid.columns, grid.x[cols])

        if self.kind in OUTCOME_KINDS:
            hit = grid.outcome_indicator(sub.q_sorted, cols)
            return (hit & below) * term.inv_prob[:, None]

        values = self.truncated_outcome(sub) * term.inv_prob - term.offset
        return values[:, None] * below

    def term_values(
        self, term: KMTerm, grid: EvaluationGrid, cols: slice = slice(None)
    ) -> np.ndarray:
        """ (m / n) * sum_i W_i phi_i, unsigned """
        phi = self.response(term, grid, cols)
        return (term.sub.m / self.n) * (term.sub.weights @ phi)

    def values(self, grid: EvaluationGrid, chunk: Optional[int] = None) -> np.ndarray:
        out = np.zeros(grid.size)
        for cols in column_chunks(grid.size, chunk or grid.size):
            for term in self.terms:
                out[cols] += term.sign * self.term_values(term, grid, cols)
        return out

    def km_mass(self) -> Dict[str, float]:
        return {term.label: km_mass(term.sub, term.label) for term in self.terms}


@dataclass(frozen=True)
class ProcessValues:
    grid: EvaluationGrid
    values: np.ndarray
    kind: str
    tau_bar: float = float("inf")

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.size,):
            raise ValueError(
                f"{values.shape[0]} process values for {self.grid.size} grid points"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("process values are not finite")
        object.__setattr__(self, "values", values)


# -----------------------------------------------------------------------------
#
#                                Design builders
#
# -----------------------------------------------------------------------------


def _arm_terms(
    treated: OrderedSubsample,
    control: OrderedSubsample,
    propensity: Propensity,
    offset: float = 0.0,
) -> Tuple[KMTerm, ...]:
    treated, control = _weighted(treated), _weighted(control)
    return (
        KMTerm(
            key=(1,),
            sub=treated,
            sign=1.0,
            prob=_probabilities(propensity, treated),
            side=1,
            offset=offset,
        ),
        KMTerm(
            key=(0,),
            sub=control,
            sign=-1.0,
            prob=_probabilities(propensity, control),
            side=0,
            offset=-offset,
        ),
    )


def dte_design(
    treated: OrderedSubsample,
    control: OrderedSubsample,
    propensity: Propensity,
    n: int,
    tau_bar: float = float("inf"),
) -> ProcessDesign:
    return ProcessDesign(
        kind="dte",
        terms=_arm_terms(treated, control, propensity),
        n=n,
        tau_bar=_tau(tau_bar),
    )


def cate_design(
    treated: OrderedSubsample,
    control: OrderedSubsample,
    propensity: Propensity,
    n: int,
    tau_bar: float = float("inf"),
) -> ProcessDesign:
    return ProcessDesign(
        kind="cate",
        terms=_arm_terms(treated, control, propensity),
        n=n,
        tau_bar=_tau(tau_bar),
    )


def hom_design(
    treated: OrderedSubsample,
    control: OrderedSubsample,
    propensity: Propensity,
    n: int,
    tau_bar: float = float("inf"),
) -> ProcessDesign:
    """
    The homogeneity process recenters each arm's response by (2t - 1) times
    the restricted ATE estimate.
    """
    ate = ate_point(treated, control, propensity, tau_bar, n)
    return ProcessDesign(
        kind="hom",
        terms=_arm_terms(treated, control, propensity, offset=ate),
        n=n,
        tau_bar=_tau(tau_bar),
        ate=ate,
    )


# (t, z) -> (sign, side): 11 / q - 10 / (1 - q) - 00 / (1 - q) + 01 / q
_LDTE_TERMS = {
    (1, 1): (1.0, 1),
    (1, 0): (-1.0, 0),
    (0, 1): (1.0, 1),
    (0, 0): (-1.0, 0),
}


def ldte_design(
    cells: Mapping[Tuple[int, int], OrderedSubsample],
    qpropensity: Propensity,
    n: int,
    require_all_cells: bool = True,
    tau_bar: float = float("inf"),
) -> ProcessDesign:
    missing = [key for key in CELL_KEYS if cells.get(key) is None]
    if missing and require_all_cells:
        raise DegenerateInstrumentError(
            "degenerate instrument design: empty cell(s) "
            + ", ".join(f"(t={t},z={z})" for t, z in missing)
        )

    terms = []
    for key in CELL_KEYS:
        if cells.get(key) is None:
            continue
        sub = _weighted(cells[key])
        sign, side = _LDTE_TERMS[key]
        terms.append(
            KMTerm(
                key=key,
                sub=sub,
                sign=sign,
                prob=_probabilities(qpropensity, sub),
                side=side,
            )
        )

    return ProcessDesign(kind="ldte", terms=tuple(terms), n=n, tau_bar=_tau(tau_bar))


def _tau(tau_bar: Optional[float]) -> float:
    return float("inf") if tau_bar is None else float(tau_bar)


# -----------------------------------------------------------------------------
#
#                                Processes
#
# -----------------------------------------------------------------------------


def _process(design: ProcessDesign, grid: EvaluationGrid) -> ProcessValues:
    return ProcessValues(
        grid=grid, values=design.values(grid), kind=design.kind, tau_bar=design.tau_bar
    )


def dte_process(
    treated: OrderedSubsample,
    control: OrderedSubsample,
    fit: Propensity,
    grid: EvaluationGrid,
    n: int,
) -> ProcessValues:
    """
    (n1/n) sum W_i 1{q_i<=y} 1{x_i<=x} / p(x_i) over the treated minus
    (n0/n) sum W_j 1{q_j<=y} 1{x_j<=x} / (1 - p(x_j)) over the controls.
    """
    return _process(dte_design(treated, control, fit, n, grid.tau_bar), grid)


def cate_process(
    treated: OrderedSubsample,
    control: OrderedSubsample,
    fit: Propensity,
    x_grid: EvaluationGrid,
    tau_bar: float,
    n: int,
) -> ProcessValues:
    return _process(cate_design(treated, control, fit, n, tau_bar), x_grid)


def ate_point(
    treated: OrderedSubsample,
    control: OrderedSubsample,
    fit: Propensity,
    tau_bar: float,
    n: int,
) -> float:
    """ the restricted ATE: IPW KM estimate of E[Y(1) 1{Y(1)<=tau}] - same for Y(0) """
    design = cate_design(treated, control, fit, n, tau_bar)
    total = 0.0
    for term in design.terms:
        response = design.truncated_outcome(term.sub) * term.inv_prob
        total += term.sign * (term.sub.m / n) * float(term.sub.weights @ response)
    return total


def hom_process(
    treated: OrderedSubsample,
    control: OrderedSubsample,
    fit: Propensity,
    x_grid: EvaluationGrid,
    tau_bar: float,
    n: int,
) -> ProcessValues:
    return _process(hom_design(treated, control, fit, n, tau_bar), x_grid)


def ldte_process(
    cells: Mapping[Tuple[int, int], OrderedSubsample],
    qfit: Propensity,
    grid: EvaluationGrid,
    n: int,
    require_all_cells: bool = True,
) -> ProcessValues:
    """
    The compliers' distribution effect process over the four (t, z) cells
    weighted by the instrument propensity q(x).  With `require_all_cells`
    False an absent cell contributes nothing.
    """
    design = ldte_design(cells, qfit, n, require_all_cells, grid.tau_bar)
    return _process(design, grid)


# -----------------------------------------------------------------------------
#
#                                Functionals
#
# -----------------------------------------------------------------------------


def ks_values(values: np.ndarray, n: int) -> np.ndarray:
    """ sqrt(n) * max |values| along the last axis """
    return np.sqrt(n) * np.max(np.abs(values), axis=-1)


def cvm_values(values: np.ndarray, counts: np.ndarray, n: int) -> np.ndarray:
    """ n * empirical-measure average of values**2 along the last axis """
    counts = np.asarray(counts, dtype=float)
    return n * (np.asarray(values) ** 2 @ counts) / counts.sum()


def ks_statistic(p: ProcessValues, n: int) -> float:
    return float(ks_values(p.values, n))


def cvm_statistic(p: ProcessValues, n: int) -> float:
    if p.grid.mode == FULL_PRODUCT:
        raise GridError(
            "the CvM statistic integrates against the empirical measure and "
            "needs a sample-pairs grid, not a full-product grid"
        )
    return float(cvm_values(p.values, p.grid.counts, n))
