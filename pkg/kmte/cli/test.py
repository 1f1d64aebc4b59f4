import click
from pydantic import ValidationError

from kmte.bootstrap import dump_replicates
from kmte.config_model import AppConfig, ColumnSchema, TestSettings
from kmte.errors import ConfigurationError, DegenerateInstrumentError
from kmte.logger import get_logger
from kmte.runner import TestReport, execute_test
from kmte.sample import load_csv
from kmte import consts

from .root import (
    cli,
    WithConfigCommand,
    opt_config_file,
    opts_dataset,
    opt_B,
    opt_seed,
    opt_threads,
    split_list,
)
from .report import Report, format_test_report


def resolve_columns(app_cfg: AppConfig, **cli_opts) -> ColumnSchema:
    """ the [columns] section with the command line column options applied """
    values = app_cfg.columns.dict() if app_cfg.columns else {}
    flags = dict(
        q=cli_opts.get("q_col"),
        delta=cli_opts.get("delta_col"),
        t=cli_opts.get("t_col"),
        x=cli_opts.get("x_cols"),
        z=cli_opts.get("z_col"),
    )
    values.update({key: value for key, value in flags.items() if value})

    if not values.get("x"):
        raise ConfigurationError(
            "covariate columns required: use --x-cols or the [columns] section"
        )

    try:
        return ColumnSchema.parse_obj(values)
    except ValidationError as exc:
        raise ConfigurationError(
            "; ".join(err["msg"] for err in exc.errors()),
            details={"columns": values},
        )


def _statistics(app_cfg: AppConfig, **cli_opts):
    """ "both" means KS only on a full-product grid, CvM needs sample pairs """
    stat = cli_opts.get("stat")
    if stat not in (None, "both"):
        return [stat]
    if (cli_opts.get("grid") or app_cfg.defaults.grid) == "full-product":
        return ["ks"]
    return list(consts.STATISTIC_TYPES)


def build_settings(app_cfg: AppConfig, **cli_opts) -> TestSettings:
    level = cli_opts.get("alpha")
    levels = None
    if level is not None:
        levels = sorted(set(app_cfg.defaults.alpha_levels) | {level})

    try:
        return TestSettings.from_config(
            app_cfg,
            kind=cli_opts.get("test"),
            stats=_statistics(app_cfg, **cli_opts),
            tau_bar=cli_opts.get("tau_bar"),
            degree=cli_opts.get("degree"),
            grid_columns=cli_opts.get("grid_cols"),
            B=cli_opts.get("B"),
            seed=cli_opts.get("seed"),
            level=level,
            alpha_levels=levels,
            multiplier=cli_opts.get("multiplier"),
            grid=cli_opts.get("grid"),
            threads=cli_opts.get("threads"),
            smooth_pvalue=cli_opts.get("smooth_pvalue") or None,
            risk_set=cli_opts.get("risk_set"),
        )
    except ValidationError as exc:
        raise ConfigurationError(
            "; ".join(
                f"{'.'.join(map(str, err['loc']))}: {err['msg']}"
                for err in exc.errors()
            )
        )


def cmd_test(app_cfg: AppConfig, **cli_opts) -> TestReport:
    """
    Load the dataset, run the test and, when asked, dump the bootstrap
    replicates.
    """
    log = get_logger()

    input_file = cli_opts.get("input_file") or app_cfg.defaults.input
    if not input_file:
        raise ConfigurationError(
            "input file required: use --input or defaults.input in the config file"
        )

    schema = resolve_columns(app_cfg, **cli_opts)
    settings = build_settings(app_cfg, **cli_opts)

    if settings.kind == "ldte" and not schema.z:
        raise DegenerateInstrumentError(
            "degenerate instrument design: instrument column required (--z-col)"
        )

    dataset = load_csv(
        input_file,
        schema,
        include=cli_opts.get("include") or (),
        exclude=cli_opts.get("exclude") or (),
    )
    log.info(f"loaded {dataset.n} rows from {input_file}")

    report, outcome = execute_test(dataset, settings)
    if cli_opts.get("dump_replicates"):
        dump_replicates(
            outcome.results, cli_opts["dump_replicates"], label=settings.kind
        )
    return report


@cli.command(name="test", cls=WithConfigCommand)
@opt_config_file
@opts_dataset
@click.option(
    "--test",
    type=click.Choice(consts.PROCESS_KINDS),
    default="dte",
    show_default=True,
    help="null hypothesis to test",
)
@click.option(
    "--stat",
    type=click.Choice(["ks", "cvm", "both"]),
    default="both",
    show_default=True,
)
@click.option("--tau-bar", type=float, help="outcome truncation point, default +inf")
@click.option("--degree", type=click.IntRange(min=0), help="propensity series degree")
@opt_B
@click.option("--alpha", type=click.FloatRange(0, 1), help="significance level")
@opt_seed
@click.option("--grid", type=click.Choice(["sample-pairs", "full-product"]))
@click.option("--grid-cols", callback=split_list, help="covariates of the grid")
@click.option("--multiplier", type=click.Choice(["mammen", "rademacher"]))
@click.option("--risk-set", type=click.Choice(["arm", "sample"]))
@click.option("--smooth-pvalue", is_flag=True, help="use (1 + #) / (B + 1)")
@opt_threads
@click.option(
    "--format",
    "out_format",
    type=click.Choice(["json", "table"]),
    default="json",
    show_default=True,
)
@click.option("--dump-replicates", type=click.Path(), help="write replicates to CSV")
@click.option("--timing", is_flag=True, help="include elapsed time")
@click.pass_context
def cli_test(ctx, **cli_opts):
    """
    Test for treatment effect heterogeneity on a CSV dataset.
    """
    report = Report(title=f"{cli_opts['test']} test")
    report.start_timing()
    result = cmd_test(ctx.obj["app_cfg"], **cli_opts)
    report.stop_timing()

    if cli_opts["out_format"] == "table":
        click.echo(format_test_report(result))
    else:
        click.echo(result.as_json(timing=cli_opts["timing"]))

    if cli_opts["timing"]:
        report.print_report()
