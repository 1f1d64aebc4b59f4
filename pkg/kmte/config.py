# -----------------------------------------------------------------------------
# System Imports
# -----------------------------------------------------------------------------

from pathlib import Path

# -----------------------------------------------------------------------------
# Public Imports
# -----------------------------------------------------------------------------

import toml
from pydantic import ValidationError

# -----------------------------------------------------------------------------
# Private Imports
# -----------------------------------------------------------------------------

from .logger import setup_logging
from .config_model import AppConfig
from .errors import ConfigurationError

__all__ = ["load", "validation_errors"]


def validation_errors(filepath, errors):
    sp_4 = " " * 4
    as_human = ["Configuration errors", f"{sp_4}File:[{filepath}]"]

    for _err in errors:
        loc_str = ".".join(map(str, _err["loc"]))
        as_human.append(f"{sp_4}Section: [{loc_str}]: {_err['msg']}")

    return "\n".join(as_human)


def load(*, filepath=None, fileio=None) -> AppConfig:
    app_cfg = dict()

    if filepath:
        app_cfg_file = Path(filepath)
        fileio = app_cfg_file.open()

    if fileio:
        try:
            app_cfg = toml.load(fileio)
        except toml.TomlDecodeError as exc:
            raise ConfigurationError(
                f"Configuration file [{fileio.name}] is not valid TOML: {exc}",
                details={"file": fileio.name},
            )

    setup_logging(app_cfg)

    app_cfg.setdefault("defaults", {})

    try:
        cfg_obj = AppConfig.parse_obj(app_cfg)
    except ValidationError as exc:
        filepath = fileio.name if fileio else ""
        raise ConfigurationError(
            validation_errors(filepath=filepath, errors=exc.errors()),
            details={
                "file": filepath,
                "errors": [
                    {"loc": ".".join(map(str, err["loc"])), "message": err["msg"]}
                    for err in exc.errors()
                ],
            },
        )

    return cfg_obj
