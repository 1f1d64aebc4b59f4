"""
This file contains the filtering functions used to process the '--include'
and '--exclude' command line options, selecting the sub-sample of CSV rows an
analysis runs on (for example one treatment group of an experiment).  The
code is not specific to any column names.
"""
import operator
import re
from abc import ABC, abstractmethod
from pathlib import Path
from typing import List, AnyStr, Optional, Callable, Dict

from .filetypes import CommentedCsvReader
from .errors import FilterError

__all__ = ["create_filter"]


value_pattern = r"(?P<op><=|>=|<|>|=)(?P<value>\S+)$"
file_reg = re.compile(r"@(?P<filename>.+)$")

_compare_ops = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


class Filter(ABC):
    """Filter is a type that supports op comparisons against record fields

    An implementation of Filter should capture:
     - The record fieldname to compare
     - The filter expression

    A Filter instance will be passed a CSV record when called, returning
        the bool result of whether the record matches the filter
    """

    @abstractmethod
    def __call__(self, record: Dict[str, AnyStr]) -> bool:
        pass


class RegexFilter(Filter):
    """ Filter a record field with a given regex """

    def __init__(self, fieldname: str, expr: str) -> None:
        self.fieldname = fieldname
        try:
            self.re = re.compile(f"^(?:{expr})$", re.IGNORECASE)
        except re.error as exc:
            raise FilterError(
                f"Invalid filter regular-expression: {expr!r}: {exc}"
            ) from None

        self.__doc__ = f"limit_{fieldname}({self.re.pattern})"
        self.__name__ = self.__doc__
        self.__qualname__ = self.__doc__

    def __call__(self, record: Dict[str, AnyStr]) -> bool:
        return bool(self.re.match((record[self.fieldname] or "").strip()))

    def __repr__(self) -> str:
        return f"RegexFilter(fieldname={self.fieldname!r}, expr={self.re})"


class NumericFilter(Filter):
    """Filter a record field by numeric comparison, E.g. "age>=25"

    A field value that is not a number never matches.
    """

    def __init__(self, fieldname: str, op: str, value: str) -> None:
        self.fieldname = fieldname
        self.op = op
        try:
            self.value = float(value)
        except ValueError:
            raise FilterError(
                f"Invalid numeric filter value: {fieldname}{op}{value}"
            ) from None

        self._op_fn = _compare_ops[op]
        self.__doc__ = f"limit_{fieldname}({op}{self.value})"
        self.__name__ = self.__doc__
        self.__qualname__ = self.__doc__

    def __call__(self, record: Dict[str, AnyStr]) -> bool:
        try:
            return self._op_fn(float(record[self.fieldname]), self.value)
        except (TypeError, ValueError):
            return False

    def __repr__(self) -> str:
        return f"NumericFilter(fieldname={self.fieldname!r}, {self.op}{self.value})"


def create_filter_function(op_filters, optest_fn):
    def filter_fn(rec):
        for op_fn in op_filters:
            if optest_fn(op_fn(rec)):
                return False

        return True

    return filter_fn


def mk_file_filter(filepath, field_names):
    """
    Rows match when their value in the first column of the filter file is
    one of the values listed there; that column must exist in the data.
    """
    if not filepath.endswith(".csv"):
        raise FilterError(
            f"File '{filepath}' not a CSV file.  "
            "Only CSV files are supported at this time"
        )

    reader = CommentedCsvReader(open(filepath))
    key = reader.fieldnames[0] if reader.fieldnames else None
    if key not in field_names:
        raise FilterError(
            f"File '{filepath}' first column {key!r} is not a data column"
        )

    filter_values = {rec[key].strip() for rec in reader}

    def op_filter(rec):
        return (rec[key] or "").strip() in filter_values

    op_filter.values = filter_values
    op_filter.__doc__ = f"file: {filepath})"
    op_filter.__name__ = op_filter.__doc__
    op_filter.__qualname__ = op_filter.__doc__

    return op_filter


def create_filter(
    constraints: List[AnyStr], field_names: List[AnyStr], include: Optional[bool] = True
) -> Callable[[Dict], bool]:
    """
    This function returns a function that is used to filter CSV records.

    Parameters
    ----------
    constraints:
        A list of constraint expressions that are in the form
        "<field-name>=<regex>", "<field-name><op><number>" with op one of
        <, <=, >, >=, or "@<filename.csv>".

    field_names:
        A list of known field names

    include:
        When True, the filter function will match when the constraint is true,
        for example if the constraint is "group=jsi", then it would match
        records that have the group field equal to "jsi".

        When False, the filter function will match when the constraint is not
        true.

    Returns
    -------
    The returning filter function expects a record as the single input
    parameter, and the function returns True/False on match.
    """
    fieldn_pattern = (
        "^(?P<keyword>" + "|".join(re.escape(fieldn) for fieldn in field_names) + ")"
    )
    field_value_reg = re.compile(fieldn_pattern + value_pattern)

    op_filters: List[Filter] = []
    for filter_expr in constraints:

        # check for the '@<filename>' filtering use-case first.

        if mo := file_reg.match(filter_expr):
            filepath = mo.group(1)
            if not Path(filepath).exists():
                raise FileNotFoundError(filepath)

            op_filters.append(mk_file_filter(filepath, field_names))
            continue

        # next check for keyword<op>value filtering use-case

        if (mo := field_value_reg.match(filter_expr)) is None:
            raise FilterError(f"Invalid filter expression: {filter_expr}")

        fieldn, op, value = mo.groupdict().values()

        if op == "=":
            op_filters.append(RegexFilter(fieldn, value))
        else:
            op_filters.append(NumericFilter(fieldn, op, value))

    optest_fn = operator.not_ if include else operator.truth
    filter_fn = create_filter_function(op_filters, optest_fn)
    filter_fn.op_filters = op_filters
    filter_fn.constraints = constraints

    return filter_fn
