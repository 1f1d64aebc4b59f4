import numpy as np
import pytest  # noqa

from kmte.config_model import ColumnSchema
from kmte.errors import (
    DataValidationError,
    DegenerateDesignError,
    DegenerateInstrumentError,
    GridError,
)
from kmte.sample import (
    Dataset,
    EvaluationGrid,
    Observation,
    covariate_grid,
    default_grid,
    load_csv,
    split_by_arm,
    split_by_arm_instrument,
    write_csv,
)


def _dataset(t, z=None, q=None):
    n = len(t)
    return Dataset(
        q=q if q is not None else np.arange(1.0, n + 1.0),
        delta=np.ones(n, dtype=int),
        t=t,
        x=np.linspace(0.0, 1.0, n).reshape(-1, 1),
        z=z,
    )


# -----------------------------------------------------------------------------
# load_csv
# -----------------------------------------------------------------------------


def test_sample_load_csv_pass(files_dir):
    d = load_csv(files_dir / "small.csv", ColumnSchema(x=["x1"]))

    assert d.n == 3 and len(d) == 3
    assert d.k == 1
    assert not d.has_instrument
    assert d.q.tolist() == [1.5, 2.0, 0.5]
    assert d.delta.tolist() == [1, 0, 1]
    assert d.covariate_names == ("x1",)


def test_sample_load_csv_instrument(files_dir):
    d = load_csv(files_dir / "small-instrument.csv", ColumnSchema(x=["x1"], z="z"))

    assert d.has_instrument
    assert d.z.tolist() == [1, 0, 0]


def test_sample_load_csv_fail_values(files_dir):
    """
    Every bad cell is reported at once with its file line and column.
    """
    with pytest.raises(DataValidationError) as excinfo:
        load_csv(files_dir / "bad-values.csv", ColumnSchema(x=["x1"]))

    errors = excinfo.value.details["errors"]
    found = {(err["row"], err["column"]) for err in errors}
    assert found == {(3, "delta"), (4, "x1"), (5, "q")}

    errmsg = excinfo.value.args[0]
    assert "Row 3, column [delta]: value '2' not in {0,1}" in errmsg
    assert "Row 4, column [x1]: non-numeric value 'abc'" in errmsg
    assert "Row 5, column [q]: negative q -1.0" in errmsg
    assert excinfo.value.code == "data_validation"


def test_sample_load_csv_fail_missing_column(files_dir):
    with pytest.raises(DataValidationError) as excinfo:
        load_csv(files_dir / "small.csv", ColumnSchema(x=["x1"], z="z"))

    assert "column [z]: missing column" in excinfo.value.args[0]


def test_sample_load_csv_fail_nofile(tmpdir):
    with pytest.raises(DataValidationError) as excinfo:
        load_csv(tmpdir.join("absent.csv"), ColumnSchema(x=["x1"]))

    assert "Data file does not exist" in excinfo.value.args[0]


def test_sample_load_csv_fail_encoding(tmpdir):
    """
    A file that is not UTF-8 is a data error located by its first bad byte.
    """
    path = tmpdir.join("utf16.csv")
    path.write_binary(b"q,delta,t,x1\n1.5,1,1,0.2\n\xff\xfe2.0,0,0,0.4\n")

    with pytest.raises(DataValidationError) as excinfo:
        load_csv(path, ColumnSchema(x=["x1"]))

    assert excinfo.value.details["byte_offset"] == 25
    assert excinfo.value.details["line"] == 3
    assert "not valid UTF-8" in excinfo.value.args[0]

    path.write_binary(b"\xff\xfeq,delta,t,x1\n")
    with pytest.raises(DataValidationError) as excinfo:
        load_csv(path, ColumnSchema(x=["x1"]))

    assert excinfo.value.details["byte_offset"] == 0


def test_sample_load_csv_filters(files_dir):
    """
    Row filters select one experiment of the Illinois layout file; the
    comment row is skipped.
    """
    schema = ColumnSchema(q="inuidur1", delta="uncensored", t="treated", x=["age"])
    path = files_dir / "illinois-synthetic.csv"

    everyone = load_csv(path, schema)
    jsi = load_csv(path, schema, include=["group=jsi|control"])
    no_hie = load_csv(path, schema, exclude=["group=hie"])

    assert everyone.n == 150
    assert jsi.n == 105
    assert np.array_equal(jsi.q, no_hie.q)
    assert jsi.q.max() <= 26.0


def test_sample_load_csv_fail_filtered_empty(files_dir):
    schema = ColumnSchema(q="inuidur1", delta="uncensored", t="treated", x=["age"])

    with pytest.raises(DataValidationError) as excinfo:
        load_csv(
            files_dir / "illinois-synthetic.csv", schema, include=["group=nobody"]
        )

    assert "matching the row filters" in excinfo.value.args[0]


def test_sample_write_csv_roundtrip(tmpdir, make_sample):
    d = make_sample(25, k=2, instrument=True)
    path = write_csv(d, tmpdir.join("roundtrip.csv"))

    back = load_csv(path, ColumnSchema(x=["x1", "x2"], z="z"))

    assert np.array_equal(back.q, d.q)
    assert np.array_equal(back.x, d.x)
    assert np.array_equal(back.delta, d.delta)
    assert np.array_equal(back.t, d.t)
    assert np.array_equal(back.z, d.z)


# -----------------------------------------------------------------------------
# data model
# -----------------------------------------------------------------------------


def test_sample_observation_fail_values():
    with pytest.raises(DataValidationError):
        Observation(q=-1.0, delta=1, t=0, x=(0.0,))

    with pytest.raises(DataValidationError) as excinfo:
        Observation(q=1.0, delta=1, t=2, x=(0.0,))

    assert "t must be 0 or 1" in excinfo.value.args[0]


def test_sample_dataset_iterates_observations():
    obs = [
        Observation(q=1.0, delta=1, t=1, x=(0.1, 2.0)),
        Observation(q=0.5, delta=0, t=0, x=(0.3, 1.0)),
    ]
    d = Dataset.from_observations(obs, covariate_names=["age", "female"])

    assert d.k == 2
    assert list(d) == obs
    assert d.covariate_names == ("age", "female")


def test_sample_dataset_fail_mixed_dimension():
    obs = [
        Observation(q=1.0, delta=1, t=1, x=(0.1, 2.0)),
        Observation(q=0.5, delta=0, t=0, x=(0.3,)),
    ]
    with pytest.raises(DataValidationError) as excinfo:
        Dataset.from_observations(obs)

    assert "differing covariate dimensions" in excinfo.value.args[0]


def test_sample_dataset_negative_q_simulated():
    """
    Simulated designs with normal outcomes may switch off the q >= 0 check.
    """
    with pytest.raises(DataValidationError):
        Dataset(q=[-0.5, 1.0], delta=[1, 1], t=[0, 1], x=[0.1, 0.2])

    d = Dataset(
        q=[-0.5, 1.0], delta=[1, 1], t=[0, 1], x=[0.1, 0.2], require_nonnegative=False
    )
    assert d.q.min() == -0.5


# -----------------------------------------------------------------------------
# arm splitting
# -----------------------------------------------------------------------------


def test_sample_split_by_arm():
    treated, control = split_by_arm(_dataset([1, 0, 1]))
    assert (treated.n, control.n) == (2, 1)


def test_sample_split_by_arm_stable():
    d = _dataset([0, 0, 1, 1], q=np.array([4.0, 3.0, 2.0, 1.0]))
    treated, control = split_by_arm(d)

    assert control.q.tolist() == [4.0, 3.0]
    assert control.row_index.tolist() == [0, 1]
    assert treated.row_index.tolist() == [2, 3]


def test_sample_split_by_arm_fail_degenerate():
    with pytest.raises(DegenerateDesignError) as excinfo:
        split_by_arm(_dataset([1, 1, 1]))

    assert "degenerate design" in excinfo.value.args[0]
    assert excinfo.value.details == {"n_treated": 3, "n_control": 0}


def test_sample_split_by_arm_instrument():
    cells = split_by_arm_instrument(_dataset([1, 1, 0, 0], z=[1, 0, 1, 0]))

    assert list(cells) == [(1, 1), (1, 0), (0, 1), (0, 0)]
    assert [cell.n for cell in cells.values()] == [1, 1, 1, 1]

    cells = split_by_arm_instrument(
        _dataset([1, 1, 0, 0] * 2, z=[1, 0, 1, 0, 0, 1, 0, 1])
    )
    assert sum(cell.n for cell in cells.values()) == 8
    assert [cell.n for cell in cells.values()] == [2, 2, 2, 2]


def test_sample_split_by_arm_instrument_fail_cell():
    with pytest.raises(DegenerateInstrumentError) as excinfo:
        split_by_arm_instrument(_dataset([1, 1, 0], z=[1, 0, 0]))

    assert "degenerate instrument design" in excinfo.value.args[0]
    assert "(t=0,z=1)" in excinfo.value.args[0]


def test_sample_split_by_arm_instrument_fail_noinstrument():
    with pytest.raises(DegenerateInstrumentError) as excinfo:
        split_by_arm_instrument(_dataset([1, 0]))

    assert "instrument column required" in excinfo.value.args[0]


# -----------------------------------------------------------------------------
# evaluation grids
# -----------------------------------------------------------------------------


def test_sample_default_grid_modes():
    d = _dataset([1, 0, 1])

    pairs = default_grid(d)
    assert pairs.size == 3
    assert pairs.mode == "sample-pairs"
    assert pairs.counts.tolist() == [1, 1, 1]

    full = default_grid(d, mode="full_product")
    assert full.size == 9
    assert full.mode == "full-product"


def test_sample_default_grid_truncation():
    d = _dataset([1, 0, 1, 0])

    grid = default_grid(d, tau_bar=2.5)
    assert grid.size == int(np.sum(d.q <= 2.5)) == 2

    with pytest.raises(GridError) as excinfo:
        default_grid(d, tau_bar=0.5)

    assert "empty after truncation" in excinfo.value.args[0]


def test_sample_default_grid_duplicates():
    """
    Duplicate sample pairs collapse onto one point carrying the count.
    """
    d = Dataset(q=[1.0, 1.0, 2.0], delta=[1, 1, 1], t=[1, 0, 1], x=[0.5, 0.5, 0.1])
    grid = default_grid(d)

    assert grid.size == 2
    assert sorted(grid.counts.tolist()) == [1, 2]
    assert grid.counts.sum() == d.n


def test_sample_grid_fail_too_large():
    d = _dataset([1, 0] * 10)

    with pytest.raises(GridError) as excinfo:
        default_grid(d, mode="full-product", max_points=50)

    assert "above the limit of 50" in excinfo.value.args[0]


def test_sample_covariate_grid(make_sample):
    d = make_sample(12, k=2)

    pairs = covariate_grid(d)
    assert pairs.size == 12
    assert pairs.covariate_only
    assert np.all(np.isinf(pairs.y))

    full = covariate_grid(d, mode="full-product")
    assert full.size == 144

    subset = covariate_grid(d, columns=["x2"])
    assert subset.columns == (1,)
    assert subset.x.shape == (12, 1)


def test_sample_grid_fail_unknown_column(make_sample):
    d = make_sample(6)

    with pytest.raises(GridError) as excinfo:
        covariate_grid(d, columns=["age"])

    assert "grid column 'age' is not a covariate" in excinfo.value.args[0]


def test_sample_grid_fail_not_distinct():
    with pytest.raises(GridError) as excinfo:
        EvaluationGrid(y=[1.0, 1.0], x=[[0.5], [0.5]], counts=[1, 1])

    assert "not distinct" in excinfo.value.args[0]


def test_sample_grid_indicators():
    grid = EvaluationGrid(y=[1.0, 2.0], x=[[0.5], [0.2]], counts=[1, 1])

    below = grid.covariate_indicator(np.array([[0.3], [0.6]]))
    assert below.tolist() == [[True, False], [False, False]]

    hit = grid.outcome_indicator(np.array([1.5, 0.5]))
    assert hit.tolist() == [[False, True], [True, True]]

    hit = grid.outcome_indicator(np.array([1.5, 0.5]), slice(1, None))
    assert hit.tolist() == [[True], [True]]
