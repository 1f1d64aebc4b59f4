"""
Kaplan-Meier weights.

A sub-sample is ordered by the observed outcome with its censoring
indicators and covariates carried along as concomitants; ties are broken with
uncensored observations first, otherwise stably.  The weight attached to the
i-th ordered observation of a sub-sample of size m is

    W_i = delta_i / (m - i + 1) * prod_{j < i} ((m - j) / (m - j + 1)) ** delta_j

so that sums of W_i g(Q_i, X_i) estimate expectations under censoring.
"""
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import NonFiniteValueError
from .logger import get_logger
from .sample import Dataset, Observation

__all__ = [
    "OrderedSubsample",
    "order_with_concomitants",
    "kaplan_meier_weights",
    "ordered_subsample",
    "km_mass",
    "km_integral",
    "product_limit_cdf",
    "cumulative_hazard",
]

ArmLike = Union[Dataset, Sequence[Observation]]


@dataclass(frozen=True)
class OrderedSubsample:
    q_sorted: np.ndarray
    delta_sorted: np.ndarray
    x_sorted: np.ndarray
    original_index: np.ndarray
    weights: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.q_sorted.shape[0]

    @property
    def mass(self) -> float:
        """ total KM weight; below 1 when the largest observation is censored """
        return float(self.weights.sum())

    def with_weights(self) -> "OrderedSubsample":
        return replace(self, weights=kaplan_meier_weights(self))


def _as_dataset(arm: ArmLike) -> Dataset:
    if isinstance(arm, Dataset):
        return arm
    return Dataset.from_observations(arm)


def order_with_concomitants(arm: ArmLike) -> OrderedSubsample:
    """
    Stable sort by (q ascending, delta descending); `original_index` maps
    each ordered position back to the row of the dataset the arm was taken
    from.
    """
    d = _as_dataset(arm)

    perm = np.argsort(-d.delta.astype(np.int64), kind="stable")
    perm = perm[np.argsort(d.q[perm], kind="stable")]

    return OrderedSubsample(
        q_sorted=d.q[perm],
        delta_sorted=d.delta[perm].astype(np.int64),
        x_sorted=d.x[perm],
        original_index=d.row_index[perm],
    )


def kaplan_meier_weights(sub: OrderedSubsample) -> np.ndarray:
    m = sub.m
    delta = sub.delta_sorted.astype(float)
    rank = np.arange(1, m + 1, dtype=float)

    # factor j: ((m - j) / (m - j + 1)) ** delta_j; the product is over j < i
    factors = ((m - rank) / (m - rank + 1.0)) ** delta
    before = np.concatenate(([1.0], np.cumprod(factors)[:-1]))

    return delta / (m - rank + 1.0) * before


def ordered_subsample(arm: ArmLike) -> OrderedSubsample:
    return order_with_concomitants(arm).with_weights()


def _weights_of(sub: OrderedSubsample) -> np.ndarray:
    return sub.weights if sub.weights is not None else kaplan_meier_weights(sub)


def _covariates_below(sub: OrderedSubsample, x) -> np.ndarray:
    k = sub.x_sorted.shape[1]
    x = np.broadcast_to(np.asarray(x, dtype=float).reshape(-1), (k,))
    return np.all(sub.x_sorted <= x[None, :], axis=1)


def km_integral(
    sub: OrderedSubsample, g: Callable[[float, np.ndarray], float]
) -> float:
    """ sum_i W_i g(q_i, x_i) """
    weights = _weights_of(sub)
    total = 0.0

    for i in range(sub.m):
        value = g(float(sub.q_sorted[i]), sub.x_sorted[i])
        if not np.isfinite(value):
            raise NonFiniteValueError(
                f"integrand is not finite at q={sub.q_sorted[i]}, "
                f"x={tuple(sub.x_sorted[i])}: {value}",
                details={"position": i, "q": float(sub.q_sorted[i])},
            )
        total += weights[i] * value

    return float(total)


def product_limit_cdf(sub: OrderedSubsample, y: float, x=np.inf) -> float:
    """ sum_i W_i 1{q_i <= y} 1{x_i <= x} """
    hit = (sub.q_sorted <= y) & _covariates_below(sub, x)
    return float(np.sum(_weights_of(sub)[hit]))


def cumulative_hazard(sub: OrderedSubsample, y: float, x=np.inf) -> float:
    """ sum_i 1{q_i <= y} 1{x_i <= x} delta_i / (m - i + 1) """
    m = sub.m
    at_risk = m - np.arange(m, dtype=float)
    hit = (sub.q_sorted <= y) & _covariates_below(sub, x)
    return float(np.sum(sub.delta_sorted[hit] / at_risk[hit]))


def km_mass(sub: OrderedSubsample, label: str = "arm") -> float:
    """ sum of the KM weights; logged when the largest observation is censored """
    mass = float(np.sum(_weights_of(sub)))
    if mass < 1.0 - 1e-12:
        get_logger().info(f"{label}: KM mass {mass:.6f} < 1, largest outcome censored")
    return mass
