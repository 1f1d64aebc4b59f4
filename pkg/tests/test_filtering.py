import csv

import pytest  # noqa

from kmte.errors import FilterError
from kmte.filtering import create_filter


def test_filtering_pass_include():
    """
    Test the use-case where the constraints are a valid set of "includes"
    """
    key_values = [("group", "jsi|control"), ("state", "il.*")]
    constraints = [f"{key}={val}" for key, val in key_values]
    field_names = [key for key, _ in key_values]

    filter_fn = create_filter(
        constraints=constraints, field_names=field_names, include=True
    )

    assert filter_fn(dict(group="jsi", state="illinois")) is True
    assert filter_fn(dict(group="CONTROL", state="illinois")) is True
    assert filter_fn(dict(group="hie", state="illinois")) is False
    assert filter_fn(dict(group="jsi", state="indiana")) is False


def test_filtering_pass_exclude():
    """
    Test use-case where the constraints are a valid set of "excludes"
    """
    filter_fn = create_filter(
        constraints=["group=hie"], field_names=["group"], include=False
    )

    assert filter_fn(dict(group="hie")) is False
    assert filter_fn(dict(group="jsi")) is True
    assert filter_fn(dict(group="control")) is True


def test_filtering_pass_numeric():
    """
    Numeric comparisons; a cell that is not a number never matches.
    """
    filter_fn = create_filter(constraints=["age>=25", "age<55"], field_names=["age"])

    assert filter_fn(dict(age="25")) is True
    assert filter_fn(dict(age="54.5")) is True
    assert filter_fn(dict(age="24")) is False
    assert filter_fn(dict(age="55")) is False
    assert filter_fn(dict(age="n/a")) is False


def test_filtering_fail_numeric_value():
    with pytest.raises(ValueError) as excinfo:
        create_filter(constraints=["age>=old"], field_names=["age"])

    assert "Invalid numeric filter value: age>=old" in excinfo.value.args[0]


def test_filtering_fail_constraint_field():
    """
    Test the use-case where the constraint form is invalid due to a
    field name being incorrect.
    """
    constraints = ["group2=jsi", "age>30"]

    with pytest.raises(FilterError) as excinfo:
        create_filter(constraints=constraints, field_names=["group", "age"])

    errmsg = excinfo.value.args[0]
    assert "Invalid filter expression: group2=jsi" in errmsg
    assert excinfo.value.as_dict()["error"]["code"] == "filter"


def test_filtering_fail_constraint_regex():
    """
    Test the case where the constraint value is an invalid regular-expression.
    """
    with pytest.raises(ValueError) as excinfo:
        create_filter(constraints=["group=***"], field_names=["group"], include=False)

    errmsg = excinfo.value.args[0]
    assert "Invalid filter regular-expression" in errmsg


def test_filtering_fail_filepath(tmpdir):
    """
    Test use-case where a filepath constraint is provide, and the file does not exist.
    """
    abs_filepath = str(tmpdir.join("pids.csv"))

    with pytest.raises(FileNotFoundError) as excinfo:
        create_filter(constraints=[f"@{abs_filepath}"], field_names=["pid"])

    errmsg = excinfo.value.args[0]
    assert errmsg == abs_filepath


def test_filtering_pass_csv_filecontents(tmpdir):
    """
    Test use-case where the constraint is a valid CSV file listing the
    values of its first column.
    """
    tmpfile = tmpdir.join("pids.csv")

    listed = [dict(pid="10001", note="late"), dict(pid="10007", note="")]
    not_listed = [dict(pid="10002", note="late"), dict(pid="10003", note="")]

    with open(tmpfile, "w+") as ofile:
        csv_wr = csv.DictWriter(ofile, fieldnames=["pid", "note"])
        csv_wr.writeheader()
        csv_wr.writerows(listed)
        ofile.write("# 10003,commented out\n")

    abs_filepath = str(tmpfile)

    filter_fn = create_filter(
        constraints=[f"@{abs_filepath}"], field_names=["pid", "note"]
    )
    for rec in listed:
        assert filter_fn(rec) is True

    for rec in not_listed:
        assert filter_fn(rec) is False

    filter_fn = create_filter(
        constraints=[f"@{abs_filepath}"], field_names=["pid", "note"], include=False
    )
    for rec in listed:
        assert filter_fn(rec) is False

    for rec in not_listed:
        assert filter_fn(rec) is True


def test_filtering_fail_csv_unknown_column(tmpdir):
    """
    The first column of the filter file must be a column of the data.
    """
    tmpfile = tmpdir.join("ids.csv")
    tmpfile.write("person\n10001\n")

    with pytest.raises(ValueError) as excinfo:
        create_filter(constraints=[f"@{tmpfile}"], field_names=["pid"])

    errmsg = excinfo.value.args[0]
    assert "first column 'person' is not a data column" in errmsg


def test_filtering_fail_csv_notcsvfile():
    """
    Test use-case when the provided file is not a CSV, and indicated by the
    filename suffix not being '.csv'
    """
    with pytest.raises(ValueError) as excinfo:
        create_filter(constraints=[f"@{__file__}"], field_names=["pid"])

    errmsg = excinfo.value.args[0]
    assert "not a CSV file." in errmsg
