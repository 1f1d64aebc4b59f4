from .root import cli

from .test import cli_test  # noqa
from .simulate import cli_simulate, cli_calibrate  # noqa


def run():
    cli(obj={})
