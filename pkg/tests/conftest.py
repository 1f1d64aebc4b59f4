# pytest configuration file

import logging
from pathlib import Path

import numpy as np
import pytest

from kmte.sample import Dataset


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="run the Monte Carlo acceptance checks",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return

    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture()
def kmte_envars(monkeypatch, files_dir):
    monkeypatch.setenv("KMTE_STUDY_DIR", str(files_dir))
    monkeypatch.setenv("KMTE_B", "49")
    monkeypatch.setenv("KMTE_SEED", "5")


class RecordsCollector(logging.Handler):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.records = []

    def emit(self, record):
        self.records.append(record)


@pytest.fixture()
def log_vcr():
    lgr = logging.getLogger()
    lgr.setLevel(logging.DEBUG)
    lgr_vcr = RecordsCollector()
    if lgr.handlers:
        lgr.handlers[0] = lgr_vcr
    else:
        lgr.addHandler(lgr_vcr)
    return lgr


@pytest.fixture(scope="module")
def files_dir(request):
    return Path(request.module.__file__).parent / "files"


def _random_sample(rng, n, k=1, censor=0.3, instrument=False, ties=False):
    """
    A random censored dataset with both arms (and all four (t, z) cells when
    `instrument`) nonempty.
    """
    while True:
        x = rng.uniform(size=(n, k))
        t = (rng.random(n) < 0.5).astype(int)
        z = (rng.random(n) < 0.5).astype(int) if instrument else None
        y = rng.exponential(size=n) + x[:, 0]
        if ties:
            y = np.round(y, 1)
        c = rng.exponential(scale=1.0 / max(censor, 1e-9), size=n)
        if ties:
            c = np.round(c, 1)
        delta = (y <= c).astype(int) if censor else np.ones(n, dtype=int)
        q = np.where(delta == 1, y, c)

        arms_ok = 0 < t.sum() < n
        cells_ok = not instrument or len(set(zip(t, z))) == 4
        if arms_ok and cells_ok:
            return Dataset(q=q, delta=delta, t=t, x=x, z=z)


@pytest.fixture()
def rng():
    return np.random.default_rng(20210607)


@pytest.fixture()
def make_sample(rng):
    def factory(n, **options):
        return _random_sample(rng, n, **options)

    return factory


@pytest.fixture()
def censored_samples():
    """
    100 seeded censored datasets of 7 to 10 rows with tied outcomes, each
    with a propensity vector in [0.2, 0.8].
    """

    def factory(instrument=False):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n = 7 + seed % 4
            d = _random_sample(
                rng, n, k=1 + seed % 2, censor=0.4, instrument=instrument, ties=True
            )
            yield d, rng.uniform(0.2, 0.8, size=n)

    return factory
