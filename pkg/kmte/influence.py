"""
Estimated influence functions of the KM weighted processes.

For every term of a ProcessDesign (a treatment arm, or a treatment x
instrument cell) the KM integral is linearized as (1/n) sum_i eta_i with

    eta_i = xi_i gamma0(Q_i) delta_i + gamma1(Q_i) (1 - delta_i) - gamma2(Q_i)

where xi is the term's response, and the gamma functions are built from the
empirical sub-distributions of the term's observations (H: all, H0: censored,
H11: uncensored), each normalized by the full sample size n.

The estimation effect of the propensity enters as a multiple of D - p(X).
With the "projected" correction the multiple is the linearization of the
process in the logit coefficients,

    R(X)' Info^-1 dI/dgamma,    Info = (1/n) sum p(1 - p) R R',

that is the p(1 - p)-weighted projection of alpha(X) on the propensity
basis R.  The "series" correction uses alpha(X) itself, computed from KM
series regressions of the responses; the two agree as the basis grows.

The at-risk mass S(w) entering the denominators is n_t/n - H_t(w) for the
"arm" risk set and 1 - H_t(w) for the "sample" risk set.  Jumps where S
vanishes contribute nothing and are counted as excluded points.
"""
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .aiofut import run_ordered
from .errors import EstimationError
from .kaplan_meier import OrderedSubsample
from .logger import get_logger
from .processes import (
    OUTCOME_KINDS,
    KMTerm,
    ProcessDesign,
    _probabilities,
    _weighted,
    column_chunks,
)
from .propensity import (
    CovariateScaler,
    LogitFit,
    PowerBasis,
    build_power_basis,
    default_degree,
    design_matrix,
    predict_probabilities,
)
from .sample import Dataset, EvaluationGrid
from . import consts

__all__ = [
    "ArmH",
    "HFunctions",
    "estimate_h_functions",
    "gamma0",
    "gamma0_values",
    "gamma1",
    "gamma2",
    "eta_hat",
    "SeriesProjection",
    "series_projection",
    "LogitLinearization",
    "logit_linearization",
    "km_series_cdf",
    "alpha_hat",
    "PROPENSITY_CORRECTIONS",
    "InfluenceMatrix",
    "influence_matrix",
]


def _positive(values, n: int) -> np.ndarray:
    # at-risk masses are multiples of 1/n
    return np.asarray(values) > 0.5 / n


# -----------------------------------------------------------------------------
#
#                         Empirical sub-distributions
#
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class ArmH:
    """
    Step functions of one arm stored as sorted jump lists:
        H(w)      = (1/n) #{arm: Q <= w}
        H0(w)     = (1/n) #{arm: Q <= w, delta = 0}
        H11(w, x) = (1/n) #{arm: Q <= w, delta = 1, X <= x}

    The at-risk function is S(w) = mass - H(w).  The "arm" risk set takes
    mass = n_t/n, so that S(w) = (n_t/n) (1 - H_arm(w)) with H_arm the
    arm's own empirical distribution of Q (normalized by n_t).  The ratios
    jump(H0)(v) / S(v) are then exactly the 1 - H form computed inside the
    arm.  The "sample" risk set takes mass = 1, the 1 - H form with H
    normalized by n.
    """

    q: np.ndarray
    delta: np.ndarray
    x: np.ndarray
    n: int
    mass: float
    censored_values: np.ndarray = field(init=False)
    censored_jumps: np.ndarray = field(init=False)

    def __post_init__(self):
        values, counts = np.unique(self.q[self.delta == 0], return_counts=True)
        object.__setattr__(self, "censored_values", values)
        object.__setattr__(self, "censored_jumps", counts / self.n)

    @classmethod
    def from_subsample(
        cls, sub: OrderedSubsample, n: int, risk_set: str = consts.DEFAULT_RISK_SET
    ) -> "ArmH":
        if risk_set not in ("arm", "sample"):
            raise ValueError(f"unknown risk set {risk_set!r}")
        return cls(
            q=sub.q_sorted,
            delta=sub.delta_sorted,
            x=sub.x_sorted,
            n=n,
            mass=sub.m / n if risk_set == "arm" else 1.0,
        )

    @property
    def m(self) -> int:
        return self.q.shape[0]

    def h(self, w) -> np.ndarray:
        return np.searchsorted(self.q, w, side="right") / self.n

    def h0(self, w) -> np.ndarray:
        return np.searchsorted(self.q[self.delta == 0], w, side="right") / self.n

    def h11(self, w, x=np.inf) -> float:
        x = np.broadcast_to(np.asarray(x, dtype=float).reshape(-1), (self.x.shape[1],))
        hit = (self.q <= w) & (self.delta == 1) & np.all(self.x <= x, axis=1)
        return float(hit.sum() / self.n)

    def at_risk(self, w) -> np.ndarray:
        """ S(w) = mass - H(w) """
        return self.mass - self.h(w)

    @property
    def excluded_points(self) -> int:
        """ censored jumps and censored observations where S vanishes """
        jumps = np.sum(~_positive(self.at_risk(self.censored_values), self.n))
        rows = np.sum(~_positive(self.at_risk(self.q[self.delta == 0]), self.n))
        return int(jumps + rows)


@dataclass(frozen=True)
class HFunctions:
    arms: Mapping[Tuple[int, ...], ArmH]
    n: int
    risk_set: str = consts.DEFAULT_RISK_SET

    def __getitem__(self, key) -> ArmH:
        key = key if isinstance(key, tuple) else (key,)
        return self.arms[key]

    @property
    def excluded_points(self) -> int:
        return sum(arm.excluded_points for arm in self.arms.values())


def estimate_h_functions(
    subsamples: Mapping, n: int, risk_set: str = consts.DEFAULT_RISK_SET
) -> HFunctions:
    """
    `subsamples` maps an arm key, t or (t, z), to its OrderedSubsample; every
    function is divided by the full sample size n.
    """
    arms = {}
    for key, sub in subsamples.items():
        key = key if isinstance(key, tuple) else (key,)
        arms[key] = ArmH.from_subsample(sub, n, risk_set)
    return HFunctions(arms=arms, n=n, risk_set=risk_set)


# -----------------------------------------------------------------------------
#
#                                gamma functions
#
# -----------------------------------------------------------------------------


def _censored_terms(arm: ArmH) -> np.ndarray:
    """ jump(H0)(v) / S(v) at the distinct censored values, 0 where S = 0 """
    risk = arm.at_risk(arm.censored_values)
    ok = _positive(risk, arm.n)
    return np.where(ok, arm.censored_jumps / np.where(ok, risk, 1.0), 0.0)


def gamma0_values(
    arm: ArmH, points, form: str = consts.DEFAULT_GAMMA0_FORM
) -> np.ndarray:
    """
    gamma0 at each of `points`: the sum over distinct censored v < point of
    jump(H0)(v) / S(v), exponentiated ("exp"), or the product of
    (1 + jump(H0)(v) / S(v)) ("product").
    """
    terms = _censored_terms(arm)
    idx = np.searchsorted(arm.censored_values, points, side="left")

    if form == "exp":
        return np.exp(np.concatenate(([0.0], np.cumsum(terms)))[idx])
    if form == "product":
        return np.concatenate(([1.0], np.cumprod(1.0 + terms)))[idx]

    raise ValueError(f"unknown gamma0 form {form!r}")


def gamma0(
    h: HFunctions, t, y_bar: float, form: str = consts.DEFAULT_GAMMA0_FORM
) -> float:
    return float(gamma0_values(h[t], np.array([y_bar]), form)[0])


def gamma1(
    h: HFunctions, t, xi: Sequence[float], gamma0_vals: Sequence[float], y_bar: float
) -> float:
    """
    (1 / S(y_bar)) * (1/n) * sum over uncensored arm points w > y_bar of
    xi(w) gamma0(w); `xi` and `gamma0_vals` are aligned with the arm's
    ordered points.
    """
    arm = h[t]
    risk = float(arm.at_risk(y_bar))
    if not _positive(risk, arm.n):
        return 0.0

    hit = (arm.q > y_bar) & (arm.delta == 1)
    total = np.sum(np.asarray(xi)[hit] * np.asarray(gamma0_vals)[hit])
    return float(total / arm.n / risk)


def gamma2(
    h: HFunctions, t, xi: Sequence[float], gamma0_vals: Sequence[float], y_bar: float
) -> float:
    """
    sum over distinct censored v < y_bar of jump(H0)(v) / S(v)**2 times
    (1/n) * sum over uncensored arm points w > v of xi(w) gamma0(w).
    """
    arm = h[t]
    xi = np.asarray(xi, dtype=float)
    g0 = np.asarray(gamma0_vals, dtype=float)
    total = 0.0

    for v, jump in zip(arm.censored_values, arm.censored_jumps):
        if v >= y_bar:
            break
        risk = float(arm.at_risk(v))
        if not _positive(risk, arm.n):
            continue
        hit = (arm.q > v) & (arm.delta == 1)
        total += jump / risk ** 2 * np.sum(xi[hit] * g0[hit]) / arm.n

    return float(total)


def _term_eta(
    design: ProcessDesign,
    term: KMTerm,
    arm: ArmH,
    g0: np.ndarray,
    grid: EvaluationGrid,
    cols: slice,
) -> np.ndarray:
    """ the (m, n_cols) eta values of the term's observations, sorted order """
    n = arm.n
    q, delta = arm.q, arm.delta

    first = design.response(term, grid, cols) * (g0 * delta)[:, None]

    # suffix[k] = sum_{j >= k} first_j, with a zero row at m
    suffix = np.zeros((arm.m + 1, first.shape[1]))
    suffix[:-1] = np.cumsum(first[::-1], axis=0)[::-1]

    above_self = suffix[np.searchsorted(q, q, side="right")] / n
    risk = arm.at_risk(q)
    ok = _positive(risk, n)
    g1 = np.where(ok[:, None], above_self / np.where(ok, risk, 1.0)[:, None], 0.0)

    v = arm.censored_values
    risk_v = arm.at_risk(v)
    ok_v = _positive(risk_v, n)
    coef = np.where(ok_v, arm.censored_jumps / np.where(ok_v, risk_v, 1.0) ** 2, 0.0)
    above_v = suffix[np.searchsorted(q, v, side="right")] / n

    cum = np.zeros((v.shape[0] + 1, first.shape[1]))
    cum[1:] = np.cumsum(coef[:, None] * above_v, axis=0)
    g2 = cum[np.searchsorted(v, q, side="left")]

    return first + (1 - delta)[:, None] * g1 - g2


def _row_positions(d: Dataset, original_index: np.ndarray) -> np.ndarray:
    lookup = np.full(int(d.row_index.max()) + 1, -1, dtype=np.int64)
    lookup[d.row_index] = np.arange(d.n)
    positions = lookup[original_index]
    if np.any(positions < 0):
        raise ValueError("sub-sample rows are not part of the dataset")
    return positions


def eta_hat(
    design: ProcessDesign,
    grid: EvaluationGrid,
    d: Dataset,
    risk_set: str = consts.DEFAULT_RISK_SET,
    gamma0_form: str = consts.DEFAULT_GAMMA0_FORM,
    h: Optional[HFunctions] = None,
) -> np.ndarray:
    """
    The (n, grid size) matrix of eta values: each observation contributes
    its own term's eta with the term's sign, and 0 for every other term.
    """
    h = h or estimate_h_functions(
        {term.key: term.sub for term in design.terms}, design.n, risk_set
    )
    out = np.zeros((d.n, grid.size))
    cols = slice(None)

    for term in design.terms:
        arm = h[term.key]
        g0 = gamma0_values(arm, arm.q, gamma0_form)
        rows = _row_positions(d, term.sub.original_index)
        out[rows] += term.sign * _term_eta(design, term, arm, g0, grid, cols)

    return out


# -----------------------------------------------------------------------------
#
#                           KM series regressions
#
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class SeriesProjection:
    """ power basis of the full sample with the inverse of its Gram matrix """

    basis: PowerBasis
    scaler: CovariateScaler
    design: np.ndarray
    gram_inv: np.ndarray
    ridge: float = 0.0

    def rows(self, x: np.ndarray) -> np.ndarray:
        return design_matrix(self.basis, self.scaler, x)


def _gram_inverse(
    design: np.ndarray, weights: np.ndarray, ridge_factor: float, name: str
) -> Tuple[np.ndarray, float]:
    """
    Inverse of (1/n) sum w_i R_i R_i'; a ridge of ridge_factor * trace / L
    is added when it is near-singular.
    """
    size = design.shape[1]
    gram = (design.T * weights) @ design / design.shape[0]

    ridge = 0.0
    eig = np.linalg.eigvalsh(gram)
    if eig[0] <= 1e-12 * eig[-1]:
        ridge = ridge_factor * np.trace(gram) / size
        gram = gram + ridge * np.eye(size)
        eig = np.linalg.eigvalsh(gram)
        get_logger().warning(f"near-singular {name}, ridge {ridge:.3g} added")

    if not eig[0] > 0 or eig[0] <= np.finfo(float).eps * eig[-1]:
        raise EstimationError(
            f"{name} is singular after the ridge fallback; reduce the series degree",
            details={"basis_size": size},
        )

    return np.linalg.inv(gram), ridge


def series_projection(
    rows: np.ndarray,
    basis: PowerBasis,
    scaler: Optional[CovariateScaler] = None,
    ridge_factor: float = consts.DEFAULT_GRAM_RIDGE,
) -> SeriesProjection:
    """ Gram matrix (1/n) sum R(X_i) R(X_i)' of the power basis """
    rows = np.asarray(rows, dtype=float)
    scaler = scaler or CovariateScaler.fit(rows)
    design = design_matrix(basis, scaler, rows)
    gram_inv, ridge = _gram_inverse(
        design, np.ones(design.shape[0]), ridge_factor, "series Gram matrix"
    )
    return SeriesProjection(
        basis=basis, scaler=scaler, design=design, gram_inv=gram_inv, ridge=ridge
    )


@dataclass(frozen=True)
class LogitLinearization:
    """
    Basis rows R(X_i) of the propensity logit with the inverse of its
    information (1/n) sum p_i (1 - p_i) R_i R_i'.  The coefficient error of
    the fit is approximately Info^-1 (1/n) sum R_i (D_i - p_i).
    """

    design: np.ndarray
    info_inv: np.ndarray
    ridge: float = 0.0

    @property
    def size(self) -> int:
        return self.design.shape[1]


def logit_linearization(
    rows: np.ndarray,
    prob: np.ndarray,
    basis: PowerBasis,
    scaler: Optional[CovariateScaler] = None,
    ridge_factor: float = consts.DEFAULT_GRAM_RIDGE,
) -> LogitLinearization:
    rows = np.asarray(rows, dtype=float)
    prob = np.asarray(prob, dtype=float)
    scaler = scaler or CovariateScaler.fit(rows)
    design = design_matrix(basis, scaler, rows)
    info_inv, ridge = _gram_inverse(
        design, prob * (1.0 - prob), ridge_factor, "logit information matrix"
    )
    return LogitLinearization(design=design, info_inv=info_inv, ridge=ridge)


def _series_coefficients(
    design: ProcessDesign,
    term: KMTerm,
    projection: SeriesProjection,
    grid: EvaluationGrid,
    cols: slice,
) -> np.ndarray:
    """ G^-1 (m/n) sum_i W_i r_i R(X_i) / pi(X_i), one column per grid y """
    sub = term.sub
    weight = sub.weights * term.inv_prob
    basis_rows = projection.rows(sub.x_sorted)

    if design.kind in OUTCOME_KINDS:
        hit = grid.outcome_indicator(sub.q_sorted, cols)
        moments = basis_rows.T @ (hit * weight[:, None])
    else:
        moments = basis_rows.T @ (weight * design.truncated_outcome(sub))[:, None]

    return projection.gram_inv @ ((sub.m / design.n) * moments)


def km_series_cdf(
    arm: OrderedSubsample,
    fit: Union[LogitFit, np.ndarray],
    projection: SeriesProjection,
    y: float,
    x: Sequence[float],
    n: int,
    t: int = 1,
) -> float:
    """
    KM series estimate of P(Y(t) <= y | X = x) from the arm's observations,
    weighted by 1/p(X) (t=1) or 1/(1 - p(X)) (t=0); clamped to [0, 1].
    """
    arm = _weighted(arm)
    term = KMTerm(key=(t,), sub=arm, sign=1.0, prob=_probabilities(fit, arm), side=t)
    probe = ProcessDesign(kind="dte", terms=(term,), n=n)
    k = arm.x_sorted.shape[1]
    grid = EvaluationGrid(y=[y], x=[[np.inf] * k], counts=[1], columns=tuple(range(k)))
    coef = _series_coefficients(probe, term, projection, grid, slice(None))
    query = projection.rows(np.asarray(x, dtype=float).reshape(1, -1))
    value = (query @ coef).item()
    return min(max(value, 0.0), 1.0)


def alpha_hat(f1: float, f0: float, p: float, x_i: Sequence[float], x) -> float:
    """ -(F1/p + F0/(1-p)) 1{X_i <= x} """
    x_i = np.asarray(x_i, dtype=float).reshape(-1)
    x = np.broadcast_to(np.asarray(x, dtype=float).reshape(-1), x_i.shape)
    if not np.all(x_i <= x):
        return 0.0
    return -(f1 / p + f0 / (1.0 - p))


# -----------------------------------------------------------------------------
#
#                                Influence matrix
#
# -----------------------------------------------------------------------------




PROPENSITY_CORRECTIONS = ("projected", "series")


@dataclass(frozen=True)
class InfluenceMatrix:
    """
    psi[i, g] = eta_i(y_g, x_g) + c(X_i; y_g, x_g) (D_i - p(X_i)), with D the
    treatment (instrument for the LDTE process), p its propensity and c the
    propensity correction.
    """

    psi: np.ndarray
    kind: str
    grid: EvaluationGrid
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.psi.shape[0]


@dataclass(frozen=True)
class _InfluenceContext:
    design: ProcessDesign
    grid: EvaluationGrid
    h: HFunctions
    gamma0: Dict[Tuple[int, ...], np.ndarray]
    rows: Dict[Tuple[int, ...], np.ndarray]
    linearization: Optional[LogitLinearization]
    projection: Optional[SeriesProjection]
    x_all: np.ndarray
    prob_all: np.ndarray
    residual: np.ndarray

    def columns(self, cols: slice) -> Tuple[np.ndarray, int]:
        design, grid = self.design, self.grid
        width = len(range(*cols.indices(grid.size)))

        eta = np.zeros((self.x_all.shape[0], width))
        for term in design.terms:
            eta[self.rows[term.key]] += term.sign * _term_eta(
                design, term, self.h[term.key], self.gamma0[term.key], grid, cols
            )

        if self.linearization is not None:
            correction, clamps = self._projected(cols, width), 0
        else:
            correction, clamps = self._series(cols, width)

        return eta + correction * self.residual[:, None], clamps

    def _projected(self, cols: slice, width: int) -> np.ndarray:
        """ R(X_i)' Info^-1 dI/dgamma for every row """
        design, lin = self.design, self.linearization
        slope = np.zeros((lin.size, width))

        for term in design.terms:
            # the homogeneity offset is held fixed; the ATE correction covers it
            phi = design.response(replace(term, offset=0.0), self.grid, cols)
            basis_rows = lin.design[self.rows[term.key]]

            # d(1/p)/dgamma = -(1 - p) R / p and d(1/(1-p))/dgamma = p R / (1 - p)
            scale = term.sub.weights * (term.side - term.prob)
            slope -= (
                term.sign
                * (term.sub.m / design.n)
                * (basis_rows.T @ (scale[:, None] * phi))
            )

        return lin.design @ (lin.info_inv @ slope)

    def _series(self, cols: slice, width: int) -> Tuple[np.ndarray, int]:
        """ alpha(X_i) from the KM series regressions of every term """
        design, grid = self.design, self.grid
        alpha = np.zeros((self.x_all.shape[0], width))
        clamps = 0

        for term in design.terms:
            coef = _series_coefficients(design, term, self.projection, grid, cols)
            fitted = self.projection.design @ coef
            if design.kind in OUTCOME_KINDS:
                clamps += int(np.sum((fitted < 0.0) | (fitted > 1.0)))
                fitted = np.clip(fitted, 0.0, 1.0)

            side = 1.0 if term.side == 1 else -1.0
            pi_all = self.prob_all if term.side == 1 else 1.0 - self.prob_all
            alpha -= term.sign * side * fitted / pi_all[:, None]

        below = grid.covariate_indicator(self.x_all)[:, cols]
        return alpha * below, clamps


def _propensity_at(propensity, x_all: np.ndarray) -> np.ndarray:
    if isinstance(propensity, LogitFit):
        return predict_probabilities(propensity, x_all)[0]
    return np.asarray(propensity, dtype=float)


def _infinite_grid(grid: EvaluationGrid) -> EvaluationGrid:
    return EvaluationGrid(
        y=[np.inf],
        x=[[np.inf] * len(grid.columns)],
        counts=[1],
        columns=grid.columns,
        covariate_only=True,
    )


def influence_matrix(
    design: ProcessDesign,
    grid: EvaluationGrid,
    d: Dataset,
    propensity: Union[LogitFit, np.ndarray],
    basis: Optional[PowerBasis] = None,
    risk_set: str = consts.DEFAULT_RISK_SET,
    gamma0_form: str = consts.DEFAULT_GAMMA0_FORM,
    gram_ridge: float = consts.DEFAULT_GRAM_RIDGE,
    chunk_columns: int = consts.DEFAULT_CHUNK_COLUMNS,
    threads: int = 1,
    hom_ate_correction: bool = True,
    propensity_correction: str = consts.DEFAULT_PROPENSITY_CORRECTION,
) -> InfluenceMatrix:
    """
    Materialize the (n, grid size) estimated influence matrix of `design`
    over `grid`.

    `propensity` is the fit (or row-aligned vector) of P(T=1|X), or of
    P(Z=1|X) for the LDTE process.  The "projected" correction linearizes
    in the coefficients of the fit's own basis; a vector propensity is
    treated as a logit fit on `basis` (default: the degree schedule).  The
    "series" correction runs the KM series regressions on `basis`, by
    default the fit's basis.  Grid columns are processed in chunks of
    `chunk_columns`, on `threads` workers; the result does not depend on
    either.

    For the homogeneity process the estimated ATE is accounted for: the
    matrix computed with the ATE held fixed is corrected by
    -D(x) (psi_ate - ATE), where D(x) = sum_t (n_t/n) sum W 1{X <= x} and
    psi_ate is the CATE influence function at x = +inf.
    """
    log = get_logger()

    if propensity_correction not in PROPENSITY_CORRECTIONS:
        raise ValueError(f"unknown propensity correction {propensity_correction!r}")

    if isinstance(propensity, LogitFit):
        scaler = propensity.scaler
        fit_basis = propensity.basis
        series_basis = basis or propensity.basis
    else:
        scaler = None
        fit_basis = basis or build_power_basis(d.k, default_degree(d.n))
        series_basis = fit_basis

    prob_all = _propensity_at(propensity, d.x)
    labels = d.z if design.kind == "ldte" else d.t

    linearization, projection = None, None
    if propensity_correction == "projected":
        linearization = logit_linearization(
            d.x, prob_all, fit_basis, scaler, gram_ridge
        )
        ridge, degree = linearization.ridge, fit_basis.degree
    else:
        projection = series_projection(d.x, series_basis, scaler, gram_ridge)
        ridge, degree = projection.ridge, series_basis.degree

    h = estimate_h_functions(
        {term.key: term.sub for term in design.terms}, design.n, risk_set
    )

    ctx = _InfluenceContext(
        design=design,
        grid=grid,
        h=h,
        gamma0={
            term.key: gamma0_values(h[term.key], term.sub.q_sorted, gamma0_form)
            for term in design.terms
        },
        rows={
            term.key: _row_positions(d, term.sub.original_index)
            for term in design.terms
        },
        linearization=linearization,
        projection=projection,
        x_all=d.x,
        prob_all=prob_all,
        residual=labels.astype(float) - prob_all,
    )

    chunks = column_chunks(grid.size, chunk_columns)
    parts = run_ordered(
        [lambda cols=cols: ctx.columns(cols) for cols in chunks], max_workers=threads
    )
    psi = np.concatenate([part for part, _ in parts], axis=1)
    clamps = sum(count for _, count in parts)

    if design.kind == "hom" and hom_ate_correction:
        cate = replace(
            design,
            kind="cate",
            terms=tuple(replace(term, offset=0.0) for term in design.terms),
        )
        psi_ate = replace(ctx, design=cate, grid=_infinite_grid(grid)).columns(
            slice(None)
        )[0][:, 0]

        mass_below = np.zeros(grid.size)
        for term in design.terms:
            below = grid.covariate_indicator(term.sub.x_sorted)
            mass_below += (term.sub.m / design.n) * (term.sub.weights @ below)

        psi = psi - (psi_ate - design.ate)[:, None] * mass_below[None, :]

    diagnostics = dict(
        excluded_points=h.excluded_points,
        clamp_events=clamps,
        gram_ridge=ridge,
        series_degree=degree,
        risk_set=risk_set,
        gamma0_form=gamma0_form,
        propensity_correction=propensity_correction,
    )

    if not np.all(np.isfinite(psi)):
        raise EstimationError("estimated influence matrix has non-finite entries")

    if h.excluded_points:
        log.info(f"influence: {h.excluded_points} excluded points (zero at-risk mass)")
    if clamps:
        log.info(f"influence: {clamps} KM series CDF values clamped to [0, 1]")

    return InfluenceMatrix(
        psi=psi, kind=design.kind, grid=grid, diagnostics=diagnostics
    )
