import sys
from datetime import datetime
from time import monotonic
from typing import Sequence

from tabulate import tabulate

LN_SEP = "# " + "-" * 78
SPACES_4 = " " * 4


class Report(object):
    TIME_FORMAT = "%Y-%b-%d %I:%M:%S %p"

    def __init__(self, title: str):
        self.title = title
        self.start_ts = None
        self.start_tm = 0

        self.stop_ts = None
        self.stop_tm = 0

    def start_timing(self):
        self.start_ts = datetime.now()
        self.start_tm = monotonic()

    def stop_timing(self):
        self.stop_ts = datetime.now()
        self.stop_tm = monotonic()

    @property
    def start_time(self):
        return self.start_ts.strftime(self.TIME_FORMAT)

    @property
    def stop_time(self):
        return self.stop_ts.strftime(self.TIME_FORMAT)

    @property
    def duration(self):
        return self.stop_tm - self.start_tm

    def print_report(self, file=sys.stderr):
        if not self.stop_tm:
            self.stop_timing()  # pragma: no cover

        print(LN_SEP, file=file)
        print(
            f"Summary: {self.title}\n"
            f"         START={self.start_time}, STOP={self.stop_time}\n"
            f"         DURATION={self.duration:.3f}s",
            file=file,
        )
        print(LN_SEP, file=file)


def format_test_report(report) -> str:
    """ one row per statistic of a TestReport """
    levels = sorted(
        {lvl for res in report.results.values() for lvl in res.critical_values},
        key=float,
    )
    headers = ["test", "statistic", "value", "p-value"]
    headers += [f"cv {float(lvl):.0%}" for lvl in levels]
    headers += ["reject"]

    rows = []
    for stat, res in report.results.items():
        rows.append(
            [report.test, stat, res.statistic, res.p_value]
            + [res.critical_values[lvl] for lvl in levels]
            + ["yes" if res.reject else "no"]
        )

    summary = (
        f"n={report.n}, treated={report.n_treated}, control={report.n_control}, "
        f"B={report.B}, seed={report.seed}, grid={report.grid['mode']} "
        f"({report.grid['size']} points)"
    )
    table = tabulate(headers=headers, tabular_data=rows, floatfmt=".4f")
    return summary + "\n\n" + table


def format_rejection_table(rows: Sequence) -> str:
    headers = ["design", "censoring", "n", "test", "stat", "rate", "se", "R", "ref"]
    data = [
        [
            row.design,
            row.censoring,
            row.n,
            row.test,
            row.statistic_type,
            row.rate,
            row.se,
            row.R,
            "" if row.reference is None else row.reference,
        ]
        for row in rows
    ]
    return tabulate(headers=headers, tabular_data=data, floatfmt=".2f")
