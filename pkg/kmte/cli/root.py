import json
from importlib import metadata
from pathlib import Path

import click
from functools import reduce
from first import first

import kmte
from kmte import config as _config
from kmte.errors import KmteError
from kmte.logger import stop_logging
from kmte import consts


VERSION = metadata.version(kmte.__package__)

EXIT_ERROR = 2


# -----------------------------------------------------------------------------
#
#                           CLI Custom Click Commands
#
# -----------------------------------------------------------------------------


class WithConfigCommand(click.Command):
    """
    Loads the configuration into ctx.obj["app_cfg"] before the command runs.
    Library errors are written to stdout as a JSON error object and end the
    command with exit code 2.  Option values are checked by their click
    callbacks.
    """

    def invoke(self, ctx):
        try:
            ctx.obj["app_cfg"] = _config.load(fileio=ctx.params["config"])
            return super().invoke(ctx)

        except KmteError as exc:
            click.echo(json.dumps(exc.as_dict(), indent=2))
            ctx.exit(EXIT_ERROR)

        finally:
            stop_logging()


# -----------------------------------------------------------------------------
#
#                                CLI Options
#
# -----------------------------------------------------------------------------


def check_for_default(ctx, opt, value):
    if value:
        return value

    if Path("kmte.toml").exists():
        return click.open_file("kmte.toml")

    return None


def split_list(ctx, opt, value):
    """ comma separated option value -> list of stripped items """
    if value is None:
        return None

    items = [item.strip() for item in value.split(",") if item.strip()]
    if not items:
        raise click.BadParameter("at least one value required")

    return items


def split_ints(ctx, opt, value, within: click.ParamType = click.INT):
    """ comma separated integers, each converted by `within` """
    items = split_list(ctx, opt, value)
    if items is None:
        return None

    return [within.convert(item, opt, ctx) for item in items]


def split_designs(ctx, opt, value):
    items = split_list(ctx, opt, value)
    if items is None:
        return None

    bad = first(item for item in items if item not in consts.DESIGN_IDS)
    if bad:
        raise click.BadParameter(
            f"invalid design id {bad!r}, expected {', '.join(consts.DESIGN_IDS)}"
        )
    return items


opt_config_file = click.option(
    "-C",
    "--config",
    envvar="KMTE_CONFIG",
    type=click.File(),
    callback=check_for_default,
    help="configuration file, default ./kmte.toml when present",
)

opt_seed = click.option("--seed", type=click.IntRange(min=0), help="master seed")

opt_B = click.option(
    "--B", "B", type=click.IntRange(min=1), help="bootstrap replications"
)

opt_threads = click.option(
    "--threads", type=click.IntRange(min=1), help="worker threads"
)

# -----------------------------------------------------------------------------
# Dataset Options
# -----------------------------------------------------------------------------

opt_input = click.option(
    "--input", "-i", "input_file", help="CSV dataset", envvar="KMTE_INPUT"
)

opt_q_col = click.option("--q-col", help="observed duration column")
opt_delta_col = click.option("--delta-col", help="non-censoring indicator column")
opt_t_col = click.option("--t-col", help="treatment column")
opt_x_cols = click.option(
    "--x-cols", callback=split_list, help="covariate columns, comma separated"
)
opt_z_col = click.option("--z-col", help="instrument column")

opt_includes = click.option(
    "--include",
    multiple=True,
    help="row filter 'column=regex', 'column<value', or '@file.csv'",
)

opt_excludes = click.option(
    "--exclude",
    multiple=True,
    help="exclude rows, same forms as --include",
)


def opts_dataset(in_fn_deco):
    return reduce(
        lambda _d, fn: fn(_d),
        [
            opt_input,
            opt_q_col,
            opt_delta_col,
            opt_t_col,
            opt_x_cols,
            opt_z_col,
            opt_includes,
            opt_excludes,
        ],
        in_fn_deco,
    )


@click.group()
@click.version_option(version=VERSION)
def cli():
    pass  # pragma: no cover
