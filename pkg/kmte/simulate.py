"""
Monte Carlo designs and rejection-rate studies.

Three data generating processes with X ~ U[0, 1], standard normal errors and
P(T=1|X) = exp(-0.5 X) / (1 + exp(-0.5 X)):

    i     Y(0) = 1 + X + e0       Y(1) = 1 + X + e1        (no effect)
    ii    Y(0) = 1 + X + e0       Y(1) = 2 + X + e1        (constant effect)
    iii   Y(0) = 1 + X + e1       Y(1) = 1 + 3X + e1       (heterogeneous)

Design iii draws one error shared by both potential outcomes.  Censoring is
C = a + b Exponential(1) for both arms, with b = 1 and a calibrated to a
target censoring share; a share of 0 means no censoring at all.
"""
import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize
from scipy.special import expit

from .aiofut import run_ordered
from .config_model import TestSettings
from .errors import CalibrationError, KmteError
from .filetypes import write_csv_rows
from .logger import get_logger
from .runner import evaluate_test, prepare_sample
from .sample import Dataset
from . import consts

__all__ = [
    "DesignSpec",
    "RejectionRow",
    "generate_design",
    "treatment_probability",
    "censoring_fraction",
    "calibrate_censoring",
    "parse_test_tokens",
    "rejection_study",
    "write_rejection_table",
    "published_rate",
    "TABLE_COLUMNS",
]

SIMULATION_TESTS = ("dte", "cate", "hom")

TABLE_COLUMNS = (
    "design",
    "censoring",
    "n",
    "test",
    "statistic_type",
    "rate",
    "se",
    "R",
    "B",
    "seed",
    "reference",
)


@dataclass(frozen=True)
class DesignSpec:
    id: str
    n: int
    censor_pct: int = 0
    censor_params: Optional[Tuple[float, float]] = None
    seed: int = 0

    def __post_init__(self):
        if self.id not in consts.DESIGN_IDS:
            raise ValueError(
                f"unknown design {self.id!r}, expected one of {consts.DESIGN_IDS}"
            )
        if self.n < 2:
            raise ValueError(f"sample size must be >= 2, got {self.n}")
        if not 0 <= self.censor_pct < 100:
            raise ValueError(
                f"censoring percentage {self.censor_pct} outside [0, 100)"
            )


def treatment_probability(x) -> np.ndarray:
    return expit(-0.5 * np.asarray(x, dtype=float))


def _draw_outcomes(design_id: str, rng: np.random.Generator, n: int):
    """ (x, t, y) for n units; the potential outcome of the drawn arm is kept """
    x = rng.uniform(size=n)
    t = (rng.random(n) < treatment_probability(x)).astype(np.int8)
    e0 = rng.standard_normal(n)
    e1 = rng.standard_normal(n)

    if design_id == "i":
        y0, y1 = 1 + x + e0, 1 + x + e1
    elif design_id == "ii":
        y0, y1 = 1 + x + e0, 2 + x + e1
    else:
        y0, y1 = 1 + x + e1, 1 + 3 * x + e1

    return x, t, np.where(t == 1, y1, y0)


def generate_design(
    spec: DesignSpec, rng: Optional[np.random.Generator] = None
) -> Dataset:
    """
    Draw n observations of the design: Q = min(Y, C) and delta = 1{Y <= C};
    with censor_pct 0 every delta is 1.  Unless `censor_params` is given,
    (a, b) is calibrated to `censor_pct`.
    """
    rng = rng or np.random.default_rng(spec.seed)
    x, t, y = _draw_outcomes(spec.id, rng, spec.n)

    if spec.censor_pct == 0:
        q, delta = y, np.ones(spec.n, dtype=np.int8)
    else:
        a, b = spec.censor_params or calibrate_censoring(spec.id, spec.censor_pct)
        c = a + b * rng.exponential(size=spec.n)
        q, delta = np.minimum(y, c), (y <= c).astype(np.int8)

    return Dataset(
        q=q,
        delta=delta,
        t=t,
        x=x.reshape(-1, 1),
        covariate_names=("x",),
        require_nonnegative=False,
    )


# -----------------------------------------------------------------------------
#
#                            Censoring calibration
#
# -----------------------------------------------------------------------------


def _censoring_gaps(design_id: str, draws: int, seed: int, b: float) -> np.ndarray:
    """ sorted Y - b E; P(Y > a + b E) is the share of gaps above a """
    rng = np.random.default_rng(seed)
    _, _, y = _draw_outcomes(design_id, rng, draws)
    return np.sort(y - b * rng.exponential(size=draws))


def censoring_fraction(
    design_id: str,
    a: float,
    b: float = consts.CENSOR_SCALE_B,
    draws: int = consts.DEFAULT_CALIBRATION_DRAWS,
    seed: int = consts.DEFAULT_CALIBRATION_SEED,
) -> float:
    gaps = _censoring_gaps(design_id, draws, seed, b)
    return float(1.0 - np.searchsorted(gaps, a, side="right") / draws)


@lru_cache(maxsize=None)
def calibrate_censoring(
    design_id: str,
    target_pct: float,
    draws: int = consts.DEFAULT_CALIBRATION_DRAWS,
    seed: int = consts.DEFAULT_CALIBRATION_SEED,
    b: float = consts.CENSOR_SCALE_B,
) -> Tuple[float, float]:
    """
    Fix the scale b and solve P(Y > a + b E) = target_pct / 100 for the
    shift a by bisection over common random numbers.
    """
    if design_id not in consts.DESIGN_IDS:
        raise CalibrationError(f"unknown design {design_id!r}")
    if not 0 < target_pct < 100:
        raise CalibrationError(
            f"censoring target {target_pct} must lie strictly between 0 and 100"
        )

    gaps = _censoring_gaps(design_id, draws, seed, b)
    target = target_pct / 100.0

    def excess(a):
        return 1.0 - np.searchsorted(gaps, a, side="right") / draws - target

    lower, upper = consts.CALIBRATION_BRACKET
    if excess(lower) * excess(upper) > 0:
        raise CalibrationError(
            f"censoring share {target_pct}% is not bracketed by a in "
            f"[{lower}, {upper}] for design {design_id}",
            details={"design": design_id, "target_pct": target_pct},
        )

    a = optimize.bisect(excess, lower, upper, xtol=1e-10)
    achieved = 100.0 * (excess(a) + target)
    get_logger().info(
        f"calibrated censoring: design {design_id}, target {target_pct}%, "
        f"a={a:.6f}, b={b}, achieved {achieved:.3f}%"
    )
    return float(a), float(b)


# -----------------------------------------------------------------------------
#
#                              Rejection studies
#
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class RejectionRow:
    design: str
    censoring: int
    n: int
    test: str
    statistic_type: str
    rate: float
    se: float
    R: int
    B: int
    seed: int
    reference: Optional[float] = None

    def as_dict(self) -> Dict:
        return asdict(self)


def parse_test_tokens(tokens: Iterable[str]) -> List[Tuple[str, str]]:
    """
    `dte-ks` selects one statistic, a bare `dte` both; the result keeps the
    (kind, statistic) pairs in table order.
    """
    wanted = set()
    for token in tokens:
        kind, _, stat = token.strip().lower().partition("-")
        if kind not in SIMULATION_TESTS:
            raise ValueError(
                f"unknown test {token!r}, expected one of {SIMULATION_TESTS} "
                f"optionally suffixed with -ks or -cvm"
            )
        if stat and stat not in consts.STATISTIC_TYPES:
            raise ValueError(f"unknown statistic in test {token!r}")
        for each in [stat] if stat else consts.STATISTIC_TYPES:
            wanted.add((kind, each))

    if not wanted:
        raise ValueError("at least one test required")

    return [
        (kind, stat)
        for kind in SIMULATION_TESTS
        for stat in consts.STATISTIC_TYPES
        if (kind, stat) in wanted
    ]


@dataclass(frozen=True)
class _Cell:
    spec: DesignSpec
    tests: Tuple[Tuple[str, str], ...]

    @property
    def key(self) -> Tuple[int, int, int]:
        return consts.DESIGN_IDS.index(self.spec.id), self.spec.censor_pct, self.spec.n


def _replication(
    cell: _Cell, rep: int, seed: int, settings: TestSettings
) -> Optional[Dict[Tuple[str, str], float]]:
    """ the p-values of one replication; None when the sample is degenerate """
    stream = np.random.SeedSequence(seed, spawn_key=(*cell.key, rep))
    boot_seed = int(stream.generate_state(1)[0])
    data = generate_design(cell.spec, np.random.default_rng(stream))

    run_settings = settings.copy(update=dict(seed=boot_seed, threads=1))
    kinds: Dict[str, List[str]] = {}
    for kind, stat in cell.tests:
        kinds.setdefault(kind, []).append(stat)

    try:
        sample = prepare_sample(data, run_settings)
        p_values = {}
        for kind, stats in kinds.items():
            outcome = evaluate_test(sample, run_settings, kind, stats)
            for stat in stats:
                p_values[(kind, stat)] = outcome.p_value(stat)
    except KmteError as exc:
        get_logger().warning(
            f"design {cell.spec.id}, censoring {cell.spec.censor_pct}%, "
            f"n={cell.spec.n}, replication {rep} skipped: {exc.message}"
        )
        return None

    return p_values


def rejection_study(
    designs: Sequence[str],
    ns: Sequence[int],
    censoring: Sequence[int],
    tests: Sequence[str],
    R: int,
    B: int = consts.DEFAULT_B,
    level: float = consts.DEFAULT_LEVEL,
    seed: int = consts.DEFAULT_SEED,
    threads: int = 1,
    settings: Optional[TestSettings] = None,
    calibration: Optional[Dict] = None,
) -> List[RejectionRow]:
    """
    Rejection rates, in percentage points, of the requested tests at `level`
    for every (design, censoring, n) cell; each of the R replications draws
    its data and bootstrap multipliers from a substream keyed by the cell
    and the replication number.  Replications that fail (for instance a
    separated propensity fit) are logged and left out of the rate.
    """
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")

    log = get_logger()
    pairs = tuple(parse_test_tokens(tests))
    calibration = calibration or {}
    settings = (settings or TestSettings()).copy(
        update=dict(B=B, level=level, alpha_levels=[level])
    )

    cells = []
    for design_id in designs:
        for pct in censoring:
            params = None
            if pct:
                params = calibrate_censoring(design_id, pct, **calibration)
            for n in ns:
                spec = DesignSpec(
                    id=design_id, n=n, censor_pct=pct, censor_params=params, seed=seed
                )
                cells.append(_Cell(spec=spec, tests=pairs))

    jobs = [
        (lambda cell=cell, rep=rep: _replication(cell, rep, seed, settings))
        for cell in cells
        for rep in range(R)
    ]

    def progress(done, total):
        if done % max(total // 20, 1) == 0 or done == total:
            log.info(f"DONE ({done}/{total}): Monte Carlo replications")

    outcomes = run_ordered(jobs, max_workers=threads, progress=progress)

    published = abs(level - 0.05) < 1e-12

    rows = []
    for index, cell in enumerate(cells):
        reps = [p for p in outcomes[index * R : (index + 1) * R] if p is not None]
        for kind, stat in pairs:
            count = len(reps)
            rate = (
                float(np.mean([p[(kind, stat)] <= level for p in reps]))
                if count
                else float("nan")
            )
            se = float(np.sqrt(rate * (1 - rate) / count)) if count else float("nan")
            rows.append(
                RejectionRow(
                    design=cell.spec.id,
                    censoring=cell.spec.censor_pct,
                    n=cell.spec.n,
                    test=kind,
                    statistic_type=stat,
                    rate=round(100.0 * rate, 4),
                    se=round(100.0 * se, 4),
                    R=count,
                    B=B,
                    seed=seed,
                    reference=published_rate(
                        cell.spec.id, cell.spec.censor_pct, cell.spec.n, kind, stat
                    )
                    if published
                    else None,
                )
            )

    return rows


def write_rejection_table(
    rows: Sequence[RejectionRow], out: Path
) -> Tuple[Path, Path]:
    """ write `<out>.csv` and `<out>.json` """
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_suffix(".csv")
    json_path = out.with_suffix(".json")

    def cell(value):
        return "" if value is None else value

    write_csv_rows(
        csv_path,
        TABLE_COLUMNS,
        ([cell(row.as_dict()[col]) for col in TABLE_COLUMNS] for row in rows),
    )
    json_path.write_text(json.dumps([row.as_dict() for row in rows], indent=2))

    return csv_path, json_path


# -----------------------------------------------------------------------------
#
#                     Published rejection rates at 5%
#
# -----------------------------------------------------------------------------

# (design, censoring, n) -> dte ks, dte cvm, cate ks, cate cvm, hom ks, hom cvm
_REFERENCE: Dict[Tuple[str, int, int], Tuple[float, ...]] = {
    ("i", 0, 100): (5.38, 5.27, 5.33, 4.97, 5.42, 4.91),
    ("i", 10, 100): (5.32, 5.07, 4.80, 4.74, 5.15, 4.82),
    ("i", 30, 100): (3.79, 5.46, 4.07, 4.35, 3.72, 3.92),
    ("ii", 0, 100): (97.52, 98.50, 99.04, 98.93, 5.85, 5.10),
    ("ii", 10, 100): (97.27, 98.43, 95.24, 94.40, 4.70, 4.54),
    ("ii", 30, 100): (76.28, 95.86, 52.74, 52.98, 4.19, 4.14),
    ("iii", 0, 100): (94.78, 89.51, 97.18, 89.54, 27.72, 48.22),
    ("iii", 10, 100): (92.33, 86.65, 91.58, 80.91, 16.22, 27.32),
    ("iii", 30, 100): (73.57, 78.96, 61.08, 52.45, 7.11, 9.84),
    ("i", 0, 300): (5.33, 5.00, 5.45, 5.34, 5.44, 5.54),
    ("i", 10, 300): (5.31, 5.10, 4.94, 4.59, 4.73, 4.32),
    ("i", 30, 300): (4.34, 5.48, 3.99, 4.44, 3.79, 4.28),
    ("ii", 0, 300): (100.0, 100.0, 100.0, 100.0, 5.16, 4.83),
    ("ii", 10, 300): (100.0, 100.0, 100.0, 100.0, 4.74, 4.68),
    ("ii", 30, 300): (99.51, 100.0, 92.81, 92.53, 4.17, 4.39),
    ("iii", 0, 300): (100.0, 100.0, 100.0, 100.0, 94.27, 99.42),
    ("iii", 10, 300): (100.0, 100.0, 100.0, 100.0, 66.50, 84.70),
    ("iii", 30, 300): (99.81, 99.95, 97.67, 95.02, 22.42, 33.66),
    ("i", 0, 500): (5.04, 5.32, 5.31, 5.20, 5.66, 5.53),
    ("i", 10, 500): (5.21, 4.93, 5.17, 4.95, 5.02, 4.61),
    ("i", 30, 500): (4.62, 5.38, 4.14, 4.35, 4.45, 4.34),
    ("ii", 0, 500): (100.0, 100.0, 100.0, 100.0, 5.61, 5.13),
    ("ii", 10, 500): (100.0, 100.0, 100.0, 100.0, 5.05, 4.72),
    ("ii", 30, 500): (99.96, 100.0, 98.77, 98.53, 4.42, 4.79),
    ("iii", 0, 500): (100.0, 100.0, 100.0, 100.0, 100.0, 100.0),
    ("iii", 10, 500): (100.0, 100.0, 100.0, 99.99, 91.41, 97.76),
    ("iii", 30, 500): (99.99, 100.0, 99.78, 99.22, 39.03, 53.51),
}

_REFERENCE_ORDER = [
    (kind, stat) for kind in SIMULATION_TESTS for stat in consts.STATISTIC_TYPES
]


def published_rate(
    design: str, censoring: int, n: int, test: str, stat: str
) -> Optional[float]:
    """ the published 5% rejection rate, in percentage points, if there is one """
    values = _REFERENCE.get((design, int(censoring), int(n)))
    if values is None or (test, stat) not in _REFERENCE_ORDER:
        return None
    return values[_REFERENCE_ORDER.index((test, stat))]
