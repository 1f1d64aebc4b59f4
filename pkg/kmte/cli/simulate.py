from functools import partial
from pathlib import Path
from textwrap import indent

import click
from tabulate import tabulate

from kmte.config_model import AppConfig, TestSettings
from kmte.simulate import (
    calibrate_censoring,
    censoring_fraction,
    parse_test_tokens,
    rejection_study,
    write_rejection_table,
)
from kmte import consts

from .root import (
    cli,
    WithConfigCommand,
    opt_config_file,
    opt_B,
    opt_seed,
    opt_threads,
    split_designs,
    split_ints,
    split_list,
)
from .report import LN_SEP, SPACES_4, Report, format_rejection_table


def split_tests(ctx, opt, value):
    tokens = split_list(ctx, opt, value)
    if tokens is None:
        return None

    try:
        parse_test_tokens(tokens)
    except ValueError as exc:
        raise click.BadParameter(str(exc))
    return tokens


def _calibration_options(app_cfg: AppConfig):
    return dict(
        draws=app_cfg.simulation.calibration_draws,
        seed=app_cfg.simulation.calibration_seed,
    )


def cmd_simulate(app_cfg: AppConfig, **cli_opts):
    """
    Run the rejection study and write the table; returns the rows and the
    (csv, json) paths.
    """
    defaults = app_cfg.defaults
    out = cli_opts.get("out")
    if not out:
        out_dir = Path(app_cfg.simulation.out_dir or ".")
        out = out_dir / "rejection_table"

    settings = TestSettings.from_config(
        app_cfg, threads=1, smooth_pvalue=cli_opts.get("smooth_pvalue") or None
    )

    rows = rejection_study(
        designs=cli_opts.get("designs") or list(consts.DESIGN_IDS),
        ns=cli_opts.get("ns") or [100, 300, 500],
        censoring=cli_opts.get("censoring") or list(consts.CENSOR_PCTS),
        tests=cli_opts.get("tests") or ["dte", "cate", "hom"],
        R=cli_opts["R"],
        B=cli_opts.get("B") or defaults.B,
        level=cli_opts.get("alpha") or defaults.level,
        seed=defaults.seed if cli_opts.get("seed") is None else cli_opts["seed"],
        threads=cli_opts.get("threads") or defaults.threads,
        settings=settings,
        calibration=_calibration_options(app_cfg),
    )

    return rows, write_rejection_table(rows, Path(out))


@cli.command(name="simulate", cls=WithConfigCommand)
@opt_config_file
@click.option("--designs", callback=split_designs, help="e.g. i,ii,iii")
@click.option(
    "--ns",
    callback=partial(split_ints, within=click.IntRange(min=2)),
    help="sample sizes, e.g. 100,300,500",
)
@click.option(
    "--censoring",
    callback=partial(split_ints, within=click.IntRange(0, 99)),
    help="censoring %, e.g. 0,10,30",
)
@click.option("--tests", callback=split_tests, help="e.g. dte,cate-ks,hom-cvm")
@click.option(
    "--R",
    "R",
    type=click.IntRange(min=1),
    default=1000,
    show_default=True,
    help="Monte Carlo replications per cell",
)
@opt_B
@click.option("--alpha", type=click.FloatRange(0, 1, min_open=True, max_open=True))
@opt_seed
@opt_threads
@click.option("--smooth-pvalue", is_flag=True)
@click.option("--out", type=click.Path(), help="output path stem for .csv / .json")
@click.pass_context
def cli_simulate(ctx, **cli_opts):
    """
    Monte Carlo rejection rates of the tests on the simulated designs.
    """
    report = Report(title="rejection study")
    report.start_timing()
    rows, paths = cmd_simulate(ctx.obj["app_cfg"], **cli_opts)
    report.stop_timing()

    click.echo(format_rejection_table(rows), err=True)
    click.echo("\n".join(str(path) for path in paths))
    report.print_report()


@cli.command(name="calibrate", cls=WithConfigCommand)
@opt_config_file
@click.option("--designs", callback=split_designs, help="e.g. i,ii,iii")
@click.option("--censoring", callback=split_ints, help="targets in %, e.g. 10,30")
@click.pass_context
def cli_calibrate(ctx, **cli_opts):
    """
    Calibrate the censoring shift of each design to the target shares.
    """
    app_cfg = ctx.obj["app_cfg"]
    opts = _calibration_options(app_cfg)
    tolerance = 100.0 * app_cfg.simulation.calibration_tolerance

    rows = []
    for design_id in cli_opts["designs"] or consts.DESIGN_IDS:
        targets = cli_opts["censoring"] or [pct for pct in consts.CENSOR_PCTS if pct]
        for target in targets:
            a, b = calibrate_censoring(design_id, target, **opts)
            check = 100.0 * censoring_fraction(
                design_id, a, b, draws=opts["draws"], seed=opts["seed"] + 1
            )
            rows.append(
                [design_id, target, a, b, check, abs(check - target) <= tolerance]
            )

    print(LN_SEP)
    print(
        indent(
            tabulate(
                headers=["design", "target %", "a", "b", "check %", "ok"],
                tabular_data=rows,
                floatfmt=".4f",
            ),
            SPACES_4,
        )
    )
    print(LN_SEP)
