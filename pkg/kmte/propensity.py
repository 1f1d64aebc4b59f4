"""
Series logit estimation of the treatment propensity P(T=1|X) and the
instrument propensity P(Z=1|X): logistic regression on the power-function
basis of the covariates, fitted by Newton-Raphson.
"""
from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import DataValidationError, EstimationError, SeparationError
from .logger import get_logger
from . import consts

__all__ = [
    "PowerBasis",
    "CovariateScaler",
    "LogitFit",
    "build_power_basis",
    "default_degree",
    "design_matrix",
    "log_likelihood",
    "score",
    "hessian",
    "fit_series_logit",
    "predict_probability",
    "predict_probabilities",
    "fit_for_degree",
]


@dataclass(frozen=True)
class PowerBasis:
    """ power functions x^lambda for multi-indices of total degree <= degree """

    k: int
    exponents: Tuple[Tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return len(self.exponents)

    @property
    def degree(self) -> int:
        return max(sum(lam) for lam in self.exponents)

    def expand(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=float).reshape(-1, self.k)
        expo = np.array(self.exponents, dtype=float)
        return np.prod(rows[:, None, :] ** expo[None, :, :], axis=2)


def build_power_basis(k: int, max_total_degree: int) -> PowerBasis:
    """
    All multi-indices with |lambda| <= max_total_degree in graded order;
    within one degree the first coordinate carries the highest power first,
    e.g. k=2, degree 1 gives (0,0), (1,0), (0,1).  The size is C(k+d, d).
    """
    if k < 1:
        raise ValueError(f"basis dimension must be >= 1, got {k}")
    if max_total_degree < 0:
        raise ValueError(f"basis degree must be >= 0, got {max_total_degree}")

    exponents = []
    for degree in range(max_total_degree + 1):
        for combo in combinations_with_replacement(range(k), degree):
            lam = [0] * k
            for coord in combo:
                lam[coord] += 1
            exponents.append(tuple(lam))

    basis = PowerBasis(k=k, exponents=tuple(exponents))
    assert basis.size == comb(k + max_total_degree, max_total_degree)
    return basis


def default_degree(n: int) -> int:
    if n < 200:
        return 1
    if n < 400:
        return 2
    return 3


@dataclass(frozen=True)
class CovariateScaler:
    """ per-coordinate affine map of the fitting sample onto [0, 1] """

    lower: np.ndarray
    span: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "CovariateScaler":
        rows = np.asarray(rows, dtype=float)
        lower = rows.min(axis=0)
        span = rows.max(axis=0) - lower
        span = np.where(span > 0, span, 1.0)
        return cls(lower=lower, span=span)

    def transform(self, rows: np.ndarray) -> np.ndarray:
        return (np.asarray(rows, dtype=float) - self.lower) / self.span


@dataclass(frozen=True)
class LogitFit:
    basis: PowerBasis
    coefficients: np.ndarray
    converged: bool
    iterations: int
    clip_epsilon: float
    scaler: CovariateScaler
    log_likelihood: float = float("nan")
    score_norm: float = float("nan")
    n_clipped: int = 0
    min_probability: float = float("nan")
    max_probability: float = float("nan")
    ridge: float = 0.0

    @property
    def degree(self) -> int:
        return self.basis.degree

    def diagnostics(self) -> dict:
        return dict(
            degree=self.degree,
            basis_size=self.basis.size,
            converged=self.converged,
            iterations=self.iterations,
            clip_count=self.n_clipped,
            clip_epsilon=self.clip_epsilon,
            min_probability=self.min_probability,
            max_probability=self.max_probability,
            log_likelihood=self.log_likelihood,
        )


def design_matrix(
    basis: PowerBasis, scaler: CovariateScaler, rows: np.ndarray
) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows.reshape(1, -1) if rows.size == basis.k else rows.reshape(-1, 1)
    if rows.shape[1] != basis.k:
        raise DataValidationError(
            f"covariate dimension {rows.shape[1]} does not match the basis k={basis.k}"
        )
    return basis.expand(scaler.transform(rows))


def log_likelihood(coef: np.ndarray, design: np.ndarray, labels: np.ndarray) -> float:
    """ sample average Bernoulli log-likelihood of the logistic model """
    eta = design @ coef
    return float(np.mean(labels * eta - np.logaddexp(0.0, eta)))


def score(coef: np.ndarray, design: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """ gradient of `log_likelihood` """
    return design.T @ (labels - expit(design @ coef)) / design.shape[0]


def hessian(coef: np.ndarray, design: np.ndarray) -> np.ndarray:
    """ Hessian of `log_likelihood`; negative semi-definite """
    p = expit(design @ coef)
    w = p * (1.0 - p)
    return -(design.T * w) @ design / design.shape[0]


def _well_conditioned(matrix: np.ndarray) -> bool:
    eig = np.linalg.eigvalsh(matrix)
    return eig[-1] > 0 and eig[0] > 1e-13 * eig[-1]


def _newton_step(
    info: np.ndarray, grad: np.ndarray, retries: int
) -> Tuple[np.ndarray, float]:
    """
    Solve info @ step = grad through a Cholesky factorization; when `info` is
    not positive definite a ridge of 1e-8 * trace / L is added, growing by
    100x per retry.
    """
    if _well_conditioned(info):
        try:
            return linalg.cho_solve(linalg.cho_factor(info), grad), 0.0
        except linalg.LinAlgError:
            pass

    trace = max(np.trace(info), np.finfo(float).tiny)
    base = consts.HESSIAN_RIDGE_FACTOR * trace / info.shape[0]
    for attempt in range(retries):
        ridge = base * 100.0 ** attempt
        try:
            ridged = info + ridge * np.eye(info.shape[0])
            if not _well_conditioned(ridged):
                continue
            return linalg.cho_solve(linalg.cho_factor(ridged), grad), ridge
        except linalg.LinAlgError:
            continue

    raise EstimationError(
        "series logit Hessian is singular after the ridge fallback; "
        "reduce the basis degree or check for collinear covariates",
        details={"basis_size": info.shape[0]},
    )


def _separation_error(degree: int) -> SeparationError:
    return SeparationError(
        f"complete separation detected for the degree-{degree} series logit; "
        f"use a lower basis degree",
        details={"degree": degree},
    )


def _check_separation(coef, design, labels, degree):
    margins = (2.0 * labels - 1.0) * (design @ coef)
    if margins.min() > consts.SEPARATION_MARGIN or (
        np.max(np.abs(coef)) > consts.SEPARATION_COEF_MAX
    ):
        raise _separation_error(degree)


def fit_series_logit(
    rows: np.ndarray,
    labels: Sequence[int],
    basis: PowerBasis,
    tol: float = consts.DEFAULT_TOL,
    max_iter: int = consts.DEFAULT_MAX_ITER,
    clip_epsilon: float = consts.DEFAULT_CLIP_EPSILON,
    ridge_retries: int = consts.DEFAULT_RIDGE_RETRIES,
    overlap_warn: float = consts.DEFAULT_OVERLAP_WARN,
    name: str = "propensity",
) -> LogitFit:
    """
    Maximize the sample average log-likelihood of the logistic model over
    the basis expansion of `rows`.

    Newton-Raphson iterations stop once the max-norm of the coefficient
    update is below `tol`; a step that would lower the likelihood is halved
    until it does not.  Covariates are rescaled to [0, 1] first, the map is
    kept in the returned fit.
    """
    log = get_logger()

    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows.reshape(-1, 1)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    n = labels.shape[0]

    if rows.shape != (n, basis.k):
        raise DataValidationError(
            f"covariate rows of shape {rows.shape} for {n} labels and k={basis.k}"
        )
    if not np.all((labels == 0) | (labels == 1)):
        raise EstimationError(f"{name} labels must be 0 or 1")
    if labels.min() == labels.max():
        raise EstimationError(
            f"{name} labels contain a single class ({int(labels[0])}); "
            f"the logit model cannot be fitted",
        )
    if basis.size > n:
        raise EstimationError(
            f"{name} basis size L={basis.size} exceeds the sample size n={n}",
            details={"basis_size": basis.size, "n": n},
        )

    scaler = CovariateScaler.fit(rows)
    design = basis.expand(scaler.transform(rows))

    coef = np.zeros(basis.size)
    share = labels.mean()
    coef[0] = np.log(share / (1.0 - share))

    ll = log_likelihood(coef, design, labels)
    converged = False
    iterations = 0
    ridge_used = 0.0

    for iterations in range(1, max_iter + 1):
        grad = score(coef, design, labels)
        step, ridge = _newton_step(-hessian(coef, design), grad, ridge_retries)
        ridge_used = max(ridge_used, ridge)

        scale = 1.0
        while True:
            trial = coef + scale * step
            trial_ll = log_likelihood(trial, design, labels)
            if trial_ll >= ll - 1e-12 or scale < 1e-10:
                break
            scale *= 0.5

        update = scale * step
        coef, ll = trial, trial_ll

        _check_separation(coef, design, labels, basis.degree)

        if np.max(np.abs(update)) < tol:
            converged = True
            break

    if not converged and ll > -1e-8:
        raise _separation_error(basis.degree)

    probs = expit(design @ coef)
    clipped = (probs < clip_epsilon) | (probs > 1.0 - clip_epsilon)

    fit = LogitFit(
        basis=basis,
        coefficients=coef,
        converged=converged,
        iterations=iterations,
        clip_epsilon=clip_epsilon,
        scaler=scaler,
        log_likelihood=ll,
        score_norm=float(np.max(np.abs(score(coef, design, labels)))),
        n_clipped=int(clipped.sum()),
        min_probability=float(probs.min()),
        max_probability=float(probs.max()),
        ridge=ridge_used,
    )

    msg = (
        f"{name}: degree={basis.degree}, L={basis.size}, iterations={iterations}, "
        f"converged={converged}, range=[{fit.min_probability:.4f}, "
        f"{fit.max_probability:.4f}], clipped={fit.n_clipped}"
    )
    log.debug(msg)

    if not converged:
        log.warning(f"{name} did not converge in {max_iter} iterations")
    if fit.min_probability < overlap_warn or fit.max_probability > 1 - overlap_warn:
        log.warning(f"{name} overlap is weak: {msg}")

    return fit


def predict_probabilities(
    fit: LogitFit, rows: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Fitted probabilities at `rows`, clipped to [eps, 1 - eps], together with
    the boolean mask of clipped entries.
    """
    probs = expit(design_matrix(fit.basis, fit.scaler, rows) @ fit.coefficients)
    eps = fit.clip_epsilon
    clipped = (probs < eps) | (probs > 1.0 - eps)
    return np.clip(probs, eps, 1.0 - eps), clipped


def predict_probability(fit: LogitFit, x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != fit.basis.k:
        raise DataValidationError(
            f"covariate vector of dimension {x.shape[0]}, the fit expects {fit.basis.k}"
        )
    probs, clipped = predict_probabilities(fit, x.reshape(1, -1))
    if clipped[0]:
        get_logger().debug(f"propensity clipped at x={tuple(x)}")
    return float(probs[0])


def fit_for_degree(
    rows: np.ndarray,
    labels: Sequence[int],
    degree: Optional[int] = None,
    **fit_kwargs,
) -> LogitFit:
    """ fit with the default degree schedule when `degree` is None """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows.reshape(-1, 1)
    degree = default_degree(rows.shape[0]) if degree is None else degree
    return fit_series_logit(
        rows, labels, build_power_basis(rows.shape[1], degree), **fit_kwargs
    )
