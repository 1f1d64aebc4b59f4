"""
Multiplier bootstrap of the KS and CvM statistics.

Each replicate multiplies the estimated influence matrix by a vector of iid
multipliers V, I*(y, x) = (1/n) sum_i psi_i(y, x) V_i, and applies the
statistic's functional.  No parameter is re-estimated.  Replicates are drawn
in chunks of BOOTSTRAP_CHUNK, each from its own SeedSequence substream, so
the replicates depend only on the seed and not on the number of workers.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .aiofut import run_ordered
from .errors import GridError
from .filetypes import write_csv_rows
from .influence import InfluenceMatrix
from .logger import get_logger
from .processes import cvm_values, ks_values
from .sample import FULL_PRODUCT
from . import consts

__all__ = [
    "BootstrapResult",
    "multiplier_draw",
    "critical_value",
    "bootstrap_p_value",
    "bootstrap_test",
    "bootstrap_tests",
    "dump_replicates",
]

SeedLike = Union[int, np.random.Generator, np.random.SeedSequence]


@dataclass(frozen=True)
class BootstrapResult:
    statistic: float
    replicates: np.ndarray
    critical_value: float
    p_value: float
    B: int
    seed: int
    statistic_type: str = "ks"
    level: float = consts.DEFAULT_LEVEL
    multiplier: str = consts.DEFAULT_MULTIPLIER
    smoothed: bool = False
    critical_values: Dict[float, float] = field(default_factory=dict)

    @property
    def reject(self) -> bool:
        return self.statistic > self.critical_value


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def multiplier_draw(
    n: int, law: str = consts.DEFAULT_MULTIPLIER, seed: SeedLike = 0, size=None
) -> np.ndarray:
    """
    iid mean-zero, variance-one multipliers.  `mammen` takes 1 - kappa with
    probability kappa / sqrt(5) and kappa otherwise, kappa the golden ratio;
    `rademacher` takes -1 and 1 with probability 1/2.  The shape is (n,) or
    (size, n).
    """
    rng = _rng(seed)
    shape = (n,) if size is None else (size, n)

    if law == "mammen":
        low = rng.random(shape) < consts.MAMMEN_P_LOW
        return np.where(low, 1.0 - consts.MAMMEN_KAPPA, consts.MAMMEN_KAPPA)
    if law == "rademacher":
        return np.where(rng.random(shape) < 0.5, -1.0, 1.0)

    raise ValueError(f"unknown multiplier law {law!r}")


def critical_value(replicates: Sequence[float], level: float) -> float:
    """ the ceil(B (1 - level))-th order statistic of the replicates """
    ordered = np.sort(np.asarray(replicates, dtype=float))
    rank = max(math.ceil(ordered.shape[0] * (1.0 - level) - 1e-9), 1)
    return float(ordered[rank - 1])


def bootstrap_p_value(
    replicates: Sequence[float], statistic: float, smooth: bool = False
) -> float:
    """ #{replicate >= statistic} / B, or (1 + #) / (B + 1) when smoothed """
    replicates = np.asarray(replicates, dtype=float)
    exceed = int(np.sum(replicates >= statistic))
    if smooth:
        return (1 + exceed) / (replicates.shape[0] + 1)
    return exceed / replicates.shape[0]


def _functionals(
    psi: InfluenceMatrix, draws: np.ndarray, statistic_types: Iterable[str]
) -> Dict[str, np.ndarray]:
    n = psi.n
    star = draws @ psi.psi / n
    out = {}
    for stat in statistic_types:
        if stat == "ks":
            out[stat] = ks_values(star, n)
        else:
            out[stat] = cvm_values(star, psi.grid.counts, n)
    return out


def _check_types(psi: InfluenceMatrix, statistic_types: Iterable[str]):
    for stat in statistic_types:
        if stat not in consts.STATISTIC_TYPES:
            raise ValueError(f"unknown statistic type {stat!r}")
        if stat == "cvm" and psi.grid.mode == FULL_PRODUCT:
            raise GridError(
                "the CvM statistic needs a sample-pairs grid, not a full-product grid"
            )


def bootstrap_tests(
    psi: InfluenceMatrix,
    statistics: Mapping[str, float],
    B: int = consts.DEFAULT_B,
    level: float = consts.DEFAULT_LEVEL,
    seed: int = consts.DEFAULT_SEED,
    multiplier: str = consts.DEFAULT_MULTIPLIER,
    alpha_levels: Sequence[float] = consts.DEFAULT_ALPHA_LEVELS,
    smooth_pvalue: bool = False,
    threads: int = 1,
) -> Dict[str, BootstrapResult]:
    """
    Bootstrap every statistic of `statistics` (statistic type -> observed
    value) from one set of B multiplier draws.
    """
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")

    types = list(statistics)
    _check_types(psi, types)
    log = get_logger()

    sizes = [consts.BOOTSTRAP_CHUNK] * (B // consts.BOOTSTRAP_CHUNK)
    if B % consts.BOOTSTRAP_CHUNK:
        sizes.append(B % consts.BOOTSTRAP_CHUNK)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))

    def chunk_job(size, stream):
        def job():
            rng = np.random.default_rng(stream)
            draws = multiplier_draw(psi.n, multiplier, rng, size)
            return _functionals(psi, draws, types)

        return job

    def progress(done, total):
        log.debug(f"bootstrap chunk DONE ({done}/{total})")

    parts = run_ordered(
        [chunk_job(size, stream) for size, stream in zip(sizes, streams)],
        max_workers=threads,
        progress=progress,
    )

    results = {}
    levels = sorted(set(alpha_levels) | {level})

    for stat in types:
        replicates = np.concatenate([part[stat] for part in parts])
        observed = float(statistics[stat])
        results[stat] = BootstrapResult(
            statistic=observed,
            replicates=replicates,
            critical_value=critical_value(replicates, level),
            p_value=bootstrap_p_value(replicates, observed, smooth_pvalue),
            B=B,
            seed=seed,
            statistic_type=stat,
            level=level,
            multiplier=multiplier,
            smoothed=smooth_pvalue,
            critical_values={lvl: critical_value(replicates, lvl) for lvl in levels},
        )
        log.info(
            f"{psi.kind}-{stat}: statistic={observed:.6g}, "
            f"p-value={results[stat].p_value:.4f}, B={B}"
        )

    return results


def bootstrap_test(
    psi: InfluenceMatrix,
    statistic_type: str,
    statistic: float,
    B: int = consts.DEFAULT_B,
    level: float = consts.DEFAULT_LEVEL,
    seed: int = consts.DEFAULT_SEED,
    **options,
) -> BootstrapResult:
    return bootstrap_tests(
        psi, {statistic_type: statistic}, B=B, level=level, seed=seed, **options
    )[statistic_type]


def dump_replicates(
    results: Union[BootstrapResult, Mapping[str, BootstrapResult]],
    filepath: Union[str, Path],
    label: Optional[str] = None,
) -> None:
    """ one row per replicate, one column per statistic type """
    if isinstance(results, BootstrapResult):
        results = {results.statistic_type: results}

    types = list(results)
    columns = [results[stat].replicates for stat in types]
    comments = [
        f"{label or 'bootstrap'}: B={results[types[0]].B} "
        f"seed={results[types[0]].seed} multiplier={results[types[0]].multiplier}"
    ]
    rows = (
        [i + 1] + [repr(float(col[i])) for col in columns]
        for i in range(len(columns[0]))
    )
    write_csv_rows(filepath, ["replicate"] + types, rows, comments=comments)
