import csv
from pathlib import Path
from typing import Iterable, Sequence, Union

__all__ = ["CommentedCsvReader", "write_csv_rows"]


class CommentedCsvReader(csv.DictReader):
    """
    A csv.DictReader that skips data rows whose first cell begins with "#",
    and remembers the file line number of the row it last returned in
    `record_line`.
    """

    record_line = 0

    def __next__(self):
        value = super(CommentedCsvReader, self).__next__()

        if (value[self.fieldnames[0]] or "").lstrip().startswith("#"):
            return self.__next__()

        self.record_line = self.line_num
        return value


def write_csv_rows(
    filepath: Union[str, Path],
    headers: Sequence[str],
    rows: Iterable[Sequence],
    comments: Sequence[str] = (),
) -> Path:
    """
    Write a header row and data rows; each entry of `comments` is written
    first as a "# ..." line, which CommentedCsvReader skips when the file is
    read back.
    """
    filepath = Path(filepath)

    with filepath.open("w", newline="", encoding="utf-8") as ofile:
        wr_csv = csv.writer(ofile)
        wr_csv.writerow(headers)
        for comment in comments:
            ofile.write(f"# {comment}\n")
        wr_csv.writerows(rows)

    return filepath
