"""
Observation data model: CSV ingestion and validation, arm splitting, and the
evaluation grids the test processes are computed on.

A Dataset is stored column-wise as read-only numpy arrays; iterating over it
yields Observation records.  Sub-samples (treatment arms, treatment x
instrument cells) are Datasets themselves, built with `Dataset.take`, and
remember the rows of the parent dataset they came from in `row_index`.
"""
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config_model import ColumnSchema
from .errors import (
    DataValidationError,
    DegenerateDesignError,
    DegenerateInstrumentError,
    GridError,
)
from .filetypes import CommentedCsvReader, write_csv_rows
from .filtering import create_filter
from .logger import get_logger
from . import consts

__all__ = [
    "ColumnSchema",
    "Observation",
    "Dataset",
    "EvaluationGrid",
    "load_csv",
    "write_csv",
    "split_by_arm",
    "split_by_arm_instrument",
    "default_grid",
    "covariate_grid",
    "resolve_columns",
    "CELL_KEYS",
]

CELL_KEYS = ((1, 1), (1, 0), (0, 1), (0, 0))

SAMPLE_PAIRS = "sample-pairs"
FULL_PRODUCT = "full-product"

_MAX_LISTED_ERRORS = 20


def _is_binary(values: np.ndarray) -> bool:
    return bool(np.all((values == 0) | (values == 1)))


def _readonly(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class Observation:
    q: float
    delta: int
    t: int
    x: Tuple[float, ...]
    z: Optional[int] = None

    def __post_init__(self):
        if not np.isfinite(self.q) or self.q < 0:
            raise DataValidationError(f"q must be finite and >= 0, got {self.q!r}")

        for name in ("delta", "t", "z"):
            value = getattr(self, name)
            if value is None and name == "z":
                continue
            if value not in (0, 1):
                raise DataValidationError(f"{name} must be 0 or 1, got {value!r}")

        if not len(self.x) or not all(np.isfinite(v) for v in self.x):
            raise DataValidationError(f"x must be a nonempty finite vector: {self.x!r}")

    @classmethod
    def trusted(cls, q, delta, t, x, z=None) -> "Observation":
        """ build without validation, for rows of an already validated Dataset """
        obs = object.__new__(cls)
        for name, value in (("q", q), ("delta", delta), ("t", t), ("x", x), ("z", z)):
            object.__setattr__(obs, name, value)
        return obs


@dataclass(frozen=True)
class Dataset:
    """
    A validated sample of (Q, delta, T, X[, Z]) observations.

    `require_nonnegative` is True for duration data; simulated designs with
    normal outcomes turn it off.  Both arms being nonempty is checked by
    `split_by_arm`, since sub-samples are Datasets too.
    """

    q: np.ndarray
    delta: np.ndarray
    t: np.ndarray
    x: np.ndarray
    z: Optional[np.ndarray] = None
    row_index: Optional[np.ndarray] = None
    covariate_names: Optional[Tuple[str, ...]] = None
    require_nonnegative: bool = field(default=True, compare=False)

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        n = q.shape[0]
        if not n:
            raise DataValidationError("dataset is empty")

        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(n, -1) if x.size == n else x.reshape(1, -1)
        if x.ndim != 2 or x.shape[0] != n or x.shape[1] < 1:
            raise DataValidationError(
                f"covariates must be an (n, k) array with n={n}, got shape {x.shape}"
            )

        delta = np.array(self.delta).reshape(-1)
        t = np.array(self.t).reshape(-1)
        z = None if self.z is None else np.array(self.z).reshape(-1)

        for name, values in (("delta", delta), ("t", t), ("z", z)):
            if values is None:
                continue
            if values.shape[0] != n:
                raise DataValidationError(
                    f"{name} has {values.shape[0]} rows, q has {n}"
                )
            if not _is_binary(values):
                raise DataValidationError(f"{name} values must be 0 or 1")

        if not np.all(np.isfinite(q)):
            raise DataValidationError("q values must be finite")
        if self.require_nonnegative and np.any(q < 0):
            raise DataValidationError("q values must be >= 0")
        if not np.all(np.isfinite(x)):
            raise DataValidationError("covariate values must be finite")

        row_index = (
            np.arange(n)
            if self.row_index is None
            else np.array(self.row_index, dtype=np.int64).reshape(-1)
        )
        if row_index.shape[0] != n:
            raise DataValidationError("row_index length does not match the data")

        names = self.covariate_names
        if names is None:
            names = tuple(f"x{i + 1}" for i in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataValidationError(
                f"{len(names)} covariate names for {x.shape[1]} covariates"
            )

        object.__setattr__(self, "q", _readonly(q))
        object.__setattr__(self, "delta", _readonly(delta.astype(np.int8)))
        object.__setattr__(self, "t", _readonly(t.astype(np.int8)))
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(
            self, "z", None if z is None else _readonly(z.astype(np.int8))
        )
        object.__setattr__(self, "row_index", _readonly(row_index))
        object.__setattr__(self, "covariate_names", tuple(names))

    # -------------------------------------------------------------------------
    # sizes
    # -------------------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    @property
    def has_instrument(self) -> bool:
        return self.z is not None

    @property
    def n_treated(self) -> int:
        return int(self.t.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    @property
    def censored_share(self) -> float:
        return float(1.0 - self.delta.mean())

    def cell_sizes(self) -> Dict[Tuple[int, int], int]:
        if not self.has_instrument:
            return {}
        return {
            (t, z): int(np.sum((self.t == t) & (self.z == z))) for t, z in CELL_KEYS
        }

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation.trusted(
                float(self.q[i]),
                int(self.delta[i]),
                int(self.t[i]),
                tuple(float(v) for v in self.x[i]),
                None if self.z is None else int(self.z[i]),
            )

    # -------------------------------------------------------------------------
    # construction helpers
    # -------------------------------------------------------------------------

    def take(self, indices: Sequence[int]) -> "Dataset":
        """ the sub-sample at `indices`, in the order given """
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            q=self.q[idx],
            delta=self.delta[idx],
            t=self.t[idx],
            x=self.x[idx],
            z=None if self.z is None else self.z[idx],
            row_index=self.row_index[idx],
            covariate_names=self.covariate_names,
            require_nonnegative=self.require_nonnegative,
        )

    def with_covariates(self, columns: Sequence[int]) -> "Dataset":
        """ the same observations keeping only the covariates at `columns` """
        cols = list(columns)
        return Dataset(
            q=self.q,
            delta=self.delta,
            t=self.t,
            x=self.x[:, cols],
            z=self.z,
            row_index=self.row_index,
            covariate_names=tuple(self.covariate_names[c] for c in cols),
            require_nonnegative=self.require_nonnegative,
        )

    def with_treatment(self, t: Sequence[int]) -> "Dataset":
        return Dataset(
            q=self.q,
            delta=self.delta,
            t=np.asarray(t),
            x=self.x,
            z=self.z,
            row_index=self.row_index,
            covariate_names=self.covariate_names,
            require_nonnegative=self.require_nonnegative,
        )

    @classmethod
    def from_observations(
        cls,
        observations: Sequence[Observation],
        covariate_names: Optional[Sequence[str]] = None,
    ) -> "Dataset":
        observations = list(observations)
        if not observations:
            raise DataValidationError("dataset is empty")

        dims = {len(obs.x) for obs in observations}
        if len(dims) != 1:
            raise DataValidationError(
                f"observations have differing covariate dimensions: {sorted(dims)}"
            )

        with_z = [obs.z is not None for obs in observations]
        if any(with_z) and not all(with_z):
            raise DataValidationError("instrument present on some observations only")

        return cls(
            q=[obs.q for obs in observations],
            delta=[obs.delta for obs in observations],
            t=[obs.t for obs in observations],
            x=[list(obs.x) for obs in observations],
            z=[obs.z for obs in observations] if all(with_z) else None,
            covariate_names=(
                tuple(covariate_names) if covariate_names is not None else None
            ),
        )


# -----------------------------------------------------------------------------
#
#                                CSV ingestion
#
# -----------------------------------------------------------------------------


def _data_errors(filepath, errors) -> str:
    sp_4 = " " * 4
    as_human = ["Data errors", f"{sp_4}File:[{filepath}]"]

    for _err in errors[:_MAX_LISTED_ERRORS]:
        as_human.append(
            f"{sp_4}Row {_err['row']}, column [{_err['column']}]: {_err['message']}"
        )

    if len(errors) > _MAX_LISTED_ERRORS:
        as_human.append(f"{sp_4}... {len(errors) - _MAX_LISTED_ERRORS} more")

    return "\n".join(as_human)


def _encoding_error(filepath: Path) -> DataValidationError:
    """ the error for a file that is not UTF-8, located by its first bad byte """
    raw = filepath.read_bytes()
    offset, reason = 0, "invalid encoding"
    try:
        raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        offset, reason = exc.start, exc.reason

    line = raw[:offset].count(b"\n") + 1
    return DataValidationError(
        f"Data file is not valid UTF-8: {filepath}: byte offset {offset} "
        f"(line {line}): {reason}",
        details={"file": str(filepath), "byte_offset": offset, "line": line},
    )


def _parse_real(text):
    value = float(text)
    if not np.isfinite(value):
        raise ValueError(f"value {text!r} is not finite")
    return value


def _parse_binary(text):
    value = float(text)
    if value not in (0.0, 1.0):
        raise ValueError(f"value {text.strip()!r} not in {{0,1}}")
    return int(value)


def load_csv(
    filepath: Union[str, Path],
    schema: ColumnSchema,
    include: Sequence[str] = (),
    exclude: Sequence[str] = (),
) -> Dataset:
    """
    Read a UTF-8 CSV file with a header row into a validated Dataset.

    Columns are located by the header names in `schema`; row order is kept.
    Rows whose first cell begins with "#" are skipped, and the optional
    `include` / `exclude` constraints (see `create_filter`) select a
    sub-sample before validation.  Every problem found is reported at once,
    each with the file line number and column name.
    """
    filepath = Path(filepath)
    if not filepath.exists():
        raise DataValidationError(
            f"Data file does not exist: {filepath.absolute()}",
            details={"file": str(filepath)},
        )

    log = get_logger()

    try:
        with filepath.open(encoding="utf-8", newline="") as ifile:
            reader = CommentedCsvReader(ifile)
            field_names = [name.strip() for name in (reader.fieldnames or [])]
            reader.fieldnames = field_names

            missing = [name for name in schema.field_names if name not in field_names]
            if missing:
                errors = [
                    {"row": 1, "column": name, "message": "missing column"}
                    for name in missing
                ]
                raise DataValidationError(
                    _data_errors(filepath, errors),
                    details={"file": str(filepath), "errors": errors},
                )

            iter_recs = reader
            if include:
                iter_recs = filter(
                    create_filter(constraints=include, field_names=field_names),
                    iter_recs,
                )
            if exclude:
                iter_recs = filter(
                    create_filter(
                        constraints=exclude, field_names=field_names, include=False
                    ),
                    iter_recs,
                )

            parsers = [(schema.q, _parse_real), (schema.delta, _parse_binary)]
            parsers += [(schema.t, _parse_binary)]
            parsers += [(name, _parse_real) for name in schema.x]
            if schema.z:
                parsers.append((schema.z, _parse_binary))

            rows: List[List[float]] = []
            errors = []

            for rec in iter_recs:
                row_no = reader.record_line
                values = []
                for column, parse in parsers:
                    text = rec.get(column)
                    try:
                        if text is None or not text.strip():
                            raise ValueError("empty cell")
                        values.append(parse(text))
                    except ValueError as exc:
                        msg = str(exc)
                        if msg.startswith("could not convert"):
                            msg = f"non-numeric value {text.strip()!r}"
                        errors.append({"row": row_no, "column": column, "message": msg})
                        values.append(None)

                q_val = values[0]
                if q_val is not None and q_val < 0:
                    errors.append(
                        dict(row=row_no, column=schema.q, message=f"negative q {q_val}")
                    )

                rows.append(values)
    except UnicodeDecodeError as exc:
        raise _encoding_error(filepath) from exc

    if errors:
        raise DataValidationError(
            _data_errors(filepath, errors),
            details={"file": str(filepath), "errors": errors},
        )

    if not rows:
        raise DataValidationError(
            f"Data file [{filepath}] has no data rows"
            + (" matching the row filters" if include or exclude else ""),
            details={"file": str(filepath)},
        )

    table = np.array(rows, dtype=float)
    k = len(schema.x)

    dataset = Dataset(
        q=table[:, 0],
        delta=table[:, 1],
        t=table[:, 2],
        x=table[:, 3 : 3 + k],
        z=table[:, 3 + k] if schema.z else None,
        covariate_names=tuple(schema.x),
    )

    log.info(
        f"Loaded {dataset.n} rows from {filepath.name}: "
        f"n1={dataset.n_treated}, n0={dataset.n_control}, "
        f"censored={dataset.censored_share:.1%}"
    )

    return dataset


def write_csv(
    dataset: Dataset, filepath: Union[str, Path], schema: Optional[ColumnSchema] = None
) -> Path:
    """
    Write `dataset` so that `load_csv(filepath, schema)` reads it back
    unchanged; reals are written with repr precision.
    """
    if schema is None:
        schema = ColumnSchema(
            x=list(dataset.covariate_names), z="z" if dataset.has_instrument else None
        )

    if len(schema.x) != dataset.k:
        raise DataValidationError(
            f"schema names {len(schema.x)} covariates, dataset has {dataset.k}"
        )
    if bool(schema.z) != dataset.has_instrument:
        raise DataValidationError("schema and dataset disagree on the instrument")

    def rows():
        for obs in dataset:
            row = [repr(obs.q), obs.delta, obs.t, *(repr(v) for v in obs.x)]
            if schema.z:
                row.append(obs.z)
            yield row

    return write_csv_rows(filepath, schema.field_names, rows())


# -----------------------------------------------------------------------------
#
#                                Arm splitting
#
# -----------------------------------------------------------------------------


def split_by_arm(d: Dataset) -> Tuple[Dataset, Dataset]:
    """ (treated, control) sub-samples, each in original relative order """
    treated = np.flatnonzero(d.t == 1)
    control = np.flatnonzero(d.t == 0)

    if not treated.size or not control.size:
        empty = "treated" if not treated.size else "control"
        raise DegenerateDesignError(
            f"degenerate design: the {empty} arm is empty",
            details={"n_treated": int(treated.size), "n_control": int(control.size)},
        )

    return d.take(treated), d.take(control)


def split_by_arm_instrument(d: Dataset) -> Dict[Tuple[int, int], Dataset]:
    """ the four (t, z) cells, keyed in CELL_KEYS order """
    if not d.has_instrument:
        raise DegenerateInstrumentError(
            "degenerate instrument design: instrument column required"
        )

    cells = {}
    empty = []
    for t, z in CELL_KEYS:
        idx = np.flatnonzero((d.t == t) & (d.z == z))
        if not idx.size:
            empty.append(f"(t={t},z={z})")
        else:
            cells[(t, z)] = d.take(idx)

    if empty:
        raise DegenerateInstrumentError(
            f"degenerate instrument design: empty cell(s) {', '.join(empty)}",
            details={
                "cell_sizes": {f"{t}{z}": n for (t, z), n in d.cell_sizes().items()}
            },
        )

    return cells


# -----------------------------------------------------------------------------
#
#                                Evaluation grids
#
# -----------------------------------------------------------------------------


def _normal_mode(mode: str) -> str:
    mode = mode.replace("_", "-")
    if mode not in (SAMPLE_PAIRS, FULL_PRODUCT):
        raise GridError(f"unknown grid mode {mode!r}")
    return mode


@dataclass(frozen=True)
class EvaluationGrid:
    """
    Distinct evaluation points (y, x).  `counts` holds the number of sample
    pairs collapsed onto each point, so that averaging with the counts is
    integration against the empirical measure.  `columns` are the covariate
    coordinates the points refer to; `covariate_only` grids (CATE and
    homogeneity tests) carry y = +inf.
    """

    y: np.ndarray
    x: np.ndarray
    counts: np.ndarray
    tau_bar: float = float("inf")
    mode: str = SAMPLE_PAIRS
    columns: Tuple[int, ...] = (0,)
    covariate_only: bool = False

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        if not y.size:
            raise GridError("evaluation grid is empty")

        x = np.array(self.x, dtype=float).reshape(y.shape[0], -1)
        counts = np.array(self.counts, dtype=np.int64).reshape(-1)

        if counts.shape != y.shape or np.any(counts < 1):
            raise GridError("grid counts must be positive, one per point")
        if x.shape[1] != len(self.columns):
            raise GridError("grid covariates do not match the grid columns")
        if not self.covariate_only and np.any(y > self.tau_bar):
            raise GridError("grid point above tau_bar")

        points = np.column_stack([y, x])
        if np.unique(points, axis=0).shape[0] != y.shape[0]:
            raise GridError("grid points are not distinct")

        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "counts", _readonly(counts))
        object.__setattr__(self, "mode", _normal_mode(self.mode))
        object.__setattr__(self, "columns", tuple(int(c) for c in self.columns))

    @property
    def size(self) -> int:
        return self.y.shape[0]

    @property
    def points(self) -> List[Tuple[float, Tuple[float, ...]]]:
        return [(float(y), tuple(map(float, x))) for y, x in zip(self.y, self.x)]

    def covariate_indicator(self, rows: np.ndarray) -> np.ndarray:
        """ the (m, size) boolean matrix 1{X_i <= x_g} over the grid columns """
        rows = np.asarray(rows, dtype=float)
        out = np.ones((rows.shape[0], self.size), dtype=bool)
        for j, col in enumerate(self.columns):
            out &= rows[:, col][:, None] <= self.x[None, :, j]
        return out

    def outcome_indicator(
        self, q: np.ndarray, cols: slice = slice(None)
    ) -> np.ndarray:
        """ the boolean matrix 1{Q_i <= y_g} over the grid points in `cols` """
        return np.asarray(q, dtype=float)[:, None] <= self.y[cols][None, :]


def resolve_columns(
    d: Dataset, columns: Optional[Sequence[Union[int, str]]] = None
) -> Tuple[int, ...]:
    """ covariate positions for names or positions; all covariates when None """
    if not columns:
        return tuple(range(d.k))

    resolved = []
    for col in columns:
        if isinstance(col, str):
            if col not in d.covariate_names:
                raise GridError(
                    f"grid column {col!r} is not a covariate: {list(d.covariate_names)}"
                )
            resolved.append(d.covariate_names.index(col))
        else:
            if not 0 <= int(col) < d.k:
                raise GridError(f"grid column {col} outside 0..{d.k - 1}")
            resolved.append(int(col))

    if len(set(resolved)) != len(resolved):
        raise GridError("grid columns repeated")

    return tuple(resolved)


def _check_size(size: int, max_points: int) -> None:
    if size > max_points:
        raise GridError(
            f"evaluation grid would hold {size} points, above the limit of "
            f"{max_points}; use the sample-pairs mode or raise max_grid_points",
            details={"size": size, "max_grid_points": max_points},
        )


def default_grid(
    d: Dataset,
    tau_bar: float = float("inf"),
    mode: str = SAMPLE_PAIRS,
    columns: Optional[Sequence[Union[int, str]]] = None,
    max_points: int = consts.DEFAULT_MAX_GRID_POINTS,
) -> EvaluationGrid:
    """
    The (y, x) evaluation grid of the DTE and LDTE processes.

    sample-pairs: the pairs (Q_i, X_i) with Q_i <= tau_bar (duplicates are
    collapsed, their multiplicity kept in `counts`).  full-product: every
    distinct Q_i <= tau_bar crossed with every distinct X_j.
    """
    mode = _normal_mode(mode)
    cols = resolve_columns(d, columns)
    tau = float("inf") if tau_bar is None else float(tau_bar)

    keep = d.q <= tau
    if not np.any(keep):
        raise GridError(
            f"evaluation grid is empty after truncation at tau_bar={tau}",
            details={"tau_bar": tau, "min_q": float(d.q.min())},
        )

    xs = d.x[:, cols]

    if mode == SAMPLE_PAIRS:
        points, counts = np.unique(
            np.column_stack([d.q[keep], xs[keep]]), axis=0, return_counts=True
        )
        return EvaluationGrid(
            y=points[:, 0],
            x=points[:, 1:],
            counts=counts,
            tau_bar=tau,
            mode=mode,
            columns=cols,
        )

    ys = np.unique(d.q[keep])
    ux = np.unique(xs, axis=0)
    _check_size(ys.size * ux.shape[0], max_points)

    return EvaluationGrid(
        y=np.repeat(ys, ux.shape[0]),
        x=np.tile(ux, (ys.size, 1)),
        counts=np.ones(ys.size * ux.shape[0], dtype=np.int64),
        tau_bar=tau,
        mode=mode,
        columns=cols,
    )


def covariate_grid(
    d: Dataset,
    mode: str = SAMPLE_PAIRS,
    columns: Optional[Sequence[Union[int, str]]] = None,
    max_points: int = consts.DEFAULT_MAX_GRID_POINTS,
) -> EvaluationGrid:
    """
    The covariate-only grid of the CATE and homogeneity processes.

    sample-pairs: the distinct X_i with multiplicities.  full-product: the
    Cartesian product of the distinct values of each covariate coordinate.
    """
    mode = _normal_mode(mode)
    cols = resolve_columns(d, columns)
    xs = d.x[:, cols]

    if mode == SAMPLE_PAIRS:
        points, counts = np.unique(xs, axis=0, return_counts=True)
    else:
        levels = [np.unique(xs[:, j]) for j in range(xs.shape[1])]
        _check_size(int(np.prod([lv.size for lv in levels])), max_points)
        points = np.array(list(product(*levels)), dtype=float)
        counts = np.ones(points.shape[0], dtype=np.int64)

    return EvaluationGrid(
        y=np.full(points.shape[0], np.inf),
        x=points,
        counts=counts,
        mode=mode,
        columns=cols,
        covariate_only=True,
    )
