from kmte.errors import KmteError
from kmte.sample import Dataset, load_csv
from kmte.runner import run_test

__all__ = ["KmteError", "Dataset", "load_csv", "run_test"]
