import json

import pytest  # noqa
from click.testing import CliRunner

from kmte.cli import test as cli_test_mod
from kmte.cli.main import cli


def _json(res):
    # warnings logged to stderr may share the captured output
    text = res.output
    return json.loads(text[text.index("{") : text.rindex("}") + 1])


@pytest.fixture()
def instrument_args(files_dir):
    return [
        "-C",
        str(files_dir / "test-instrument.toml"),
        "--input",
        str(files_dir / "instrument.csv"),
    ]


@pytest.fixture()
def illinois_args(files_dir):
    return [
        "-C",
        str(files_dir / "test-illinois.toml"),
        "--input",
        str(files_dir / "illinois-synthetic.csv"),
        "--include",
        "group=jsi|control",
    ]


def test_cli_test_pass_json(instrument_args):
    runner = CliRunner()
    res = runner.invoke(cli, obj={}, args=["test", *instrument_args, "--B", "19"])

    assert res.exit_code == 0
    report = _json(res)
    assert report["test"] == "dte"
    assert report["B"] == 19 and report["seed"] == 3
    assert set(report["results"]) == {"ks", "cvm"}
    assert "elapsed_seconds" not in report


def test_cli_test_pass_same_seed(instrument_args):
    """
    Two runs with the same seed print identical reports.
    """
    runner = CliRunner()
    args = ["test", *instrument_args, "--B", "1", "--seed", "7"]

    one = runner.invoke(cli, obj={}, args=args)
    two = runner.invoke(cli, obj={}, args=args)

    assert one.exit_code == two.exit_code == 0
    assert _json(one) == _json(two)
    assert _json(one)["seed"] == 7


def test_cli_test_pass_table(instrument_args):
    runner = CliRunner()
    res = runner.invoke(
        cli,
        obj={},
        args=["test", *instrument_args, "--B", "9", "--format", "table"],
    )

    assert res.exit_code == 0
    assert "statistic" in res.output
    assert "cv 5%" in res.output
    assert "B=9, seed=3" in res.output


def test_cli_test_pass_options(instrument_args):
    runner = CliRunner()
    res = runner.invoke(
        cli,
        obj={},
        args=[
            "test",
            *instrument_args,
            "--test",
            "hom",
            "--stat",
            "ks",
            "--B",
            "9",
            "--alpha",
            "0.2",
            "--multiplier",
            "rademacher",
            "--tau-bar",
            "1.5",
        ],
    )

    assert res.exit_code == 0
    report = _json(res)
    assert report["test"] == "hom"
    assert report["statistics"] == ["ks"]
    assert report["multiplier"] == "rademacher"
    assert report["tau_bar"] == 1.5
    assert "0.2" in report["results"]["ks"]["critical_values"]
    assert report["results"]["ks"]["level"] == 0.2


def test_cli_test_full_product_ks_only(instrument_args):
    runner = CliRunner()
    res = runner.invoke(
        cli,
        obj={},
        args=["test", *instrument_args, "--B", "9", "--grid", "full-product"],
    )

    assert res.exit_code == 0
    report = _json(res)
    assert report["grid"]["mode"] == "full-product"
    assert list(report["results"]) == ["ks"]


def test_cli_test_pass_ldte(instrument_args):
    runner = CliRunner()
    res = runner.invoke(
        cli, obj={}, args=["test", *instrument_args, "--test", "ldte", "--B", "9"]
    )

    assert res.exit_code == 0
    report = _json(res)
    assert report["test"] == "ldte"
    assert sum(report["n_tz"].values()) == report["n"]


def test_cli_test_fail_ldte_no_instrument(illinois_args):
    runner = CliRunner()
    res = runner.invoke(cli, obj={}, args=["test", *illinois_args, "--test", "ldte"])

    assert res.exit_code == 2
    error = _json(res)["error"]
    assert error["code"] == "degenerate_instrument_design"
    assert "--z-col" in error["message"]


def test_cli_test_pass_illinois(illinois_args):
    runner = CliRunner()
    res = runner.invoke(
        cli,
        obj={},
        args=["test", *illinois_args, "--B", "19", "--test", "cate", "--timing"],
    )

    assert res.exit_code == 0
    report = _json(res)
    assert report["n"] == 105
    assert report["grid"]["columns"] == ["age", "female"]
    assert report["elapsed_seconds"] >= 0


def test_cli_test_pass_dump_replicates(instrument_args, tmpdir):
    dump = tmpdir.join("reps.csv")
    runner = CliRunner()
    res = runner.invoke(
        cli,
        obj={},
        args=["test", *instrument_args, "--B", "5", "--dump-replicates", str(dump)],
    )

    assert res.exit_code == 0
    lines = dump.read_text("utf-8").splitlines()
    assert lines[0] == "replicate,ks,cvm"
    assert lines[1] == "# dte: B=5 seed=3 multiplier=mammen"
    assert len(lines) == 2 + 5


def test_cli_test_fail_missing_input(files_dir):
    runner = CliRunner()
    res = runner.invoke(
        cli,
        obj={},
        args=[
            "test",
            "-C",
            str(files_dir / "test-instrument.toml"),
            "--input",
            "no-such-file.csv",
        ],
    )

    assert res.exit_code == 2
    error = _json(res)["error"]
    assert error["code"] == "data_validation"
    assert "does not exist" in error["message"]


def test_cli_test_fail_no_input():
    runner = CliRunner()

    # isolate the file system so the project "kmte.toml" is not picked up
    with runner.isolated_filesystem():
        res = runner.invoke(cli, obj={}, args=["test", "--x-cols", "x1"])

    assert res.exit_code == 2
    assert "input file required" in _json(res)["error"]["message"]


def test_cli_test_fail_no_covariates(files_dir):
    runner = CliRunner()

    with runner.isolated_filesystem():
        res = runner.invoke(
            cli, obj={}, args=["test", "--input", str(files_dir / "small.csv")]
        )

    assert res.exit_code == 2
    assert _json(res)["error"]["code"] == "configuration"


def test_cli_test_fail_bad_filter(instrument_args):
    runner = CliRunner()
    res = runner.invoke(
        cli, obj={}, args=["test", *instrument_args, "--include", "x1"]
    )

    assert res.exit_code == 2
    error = _json(res)["error"]
    assert error["code"] == "filter"
    assert "Invalid filter expression: x1" in error["message"]


def test_cli_test_fail_bad_filter_regex(instrument_args):
    runner = CliRunner()
    res = runner.invoke(
        cli, obj={}, args=["test", *instrument_args, "--include", "x1=(0"]
    )

    assert res.exit_code == 2
    assert _json(res)["error"]["code"] == "filter"


def test_cli_test_fail_encoding(files_dir, tmpdir):
    bad = tmpdir.join("latin1.csv")
    text = "q,delta,t,z,x1\n1.5,1,1,1,0.2\n\xe92.0,0,0,1,0.4\n"
    bad.write_binary(text.encode("latin-1"))
    config = str(files_dir / "test-instrument.toml")

    runner = CliRunner()
    res = runner.invoke(cli, obj={}, args=["test", "-C", config, "--input", str(bad)])

    assert res.exit_code == 2
    error = _json(res)["error"]
    assert error["code"] == "data_validation"
    assert error["details"]["byte_offset"] == 29
    assert error["details"]["line"] == 3


def test_cli_test_resolve_columns(files_dir):
    """
    Command line column options replace the [columns] section values.
    """
    from kmte import config

    app_cfg = config.load(filepath=files_dir / "test-illinois.toml")
    schema = cli_test_mod.resolve_columns(app_cfg, x_cols=["age"], t_col="jsi")

    assert schema.x == ["age"]
    assert schema.t == "jsi"
    assert schema.q == "inuidur1"


def test_cli_test_pass_illinois_dte_ks(illinois_args):
    runner = CliRunner()
    res = runner.invoke(
        cli, obj={}, args=["test", *illinois_args, "--stat", "ks", "--B", "19"]
    )

    assert res.exit_code == 0
    report = _json(res)
    assert report["test"] == "dte"
    assert list(report["results"]) == ["ks"]
    assert 0 <= report["results"]["ks"]["p_value"] <= 1
    assert report["n_treated"] == 52 and report["n_control"] == 53
