"""Bundled defaults and user-supplied TOML configuration files."""

import logging
from importlib import resources

import toml

logger = logging.getLogger(__name__)

_PACKAGE = "capsnet._config"


def bundled_names() -> tuple[str, ...]:
    """Names of the configuration files shipped with the package."""

    return tuple(
        sorted(
            entry.name.removesuffix(".toml")
            for entry in resources.files(_PACKAGE).iterdir()
            if entry.name.endswith(".toml")
        )
    )


def load_config(name: str, path: None | str = None) -> dict:
    """
    Read the settings for one part of the package.

    Parameters
    ----------
    name : str
        Which settings to read: `"train"`, `"gradcheck"`, `"mlp"` or
        `"cnn"`. Selects the bundled file when `path` is not given.
    path : str, optional
        User TOML file to read instead of the bundled one.

    Returns
    -------
    config : dict
        Settings as read from the file, unchecked.

    Raises
    ------
    FileNotFoundError
        If there is no bundled file called `name`, or `path` does not
        exist.
    """

    if isinstance(path, str):
        logger.debug("Reading %s settings from %s", name, path)
        return toml.load(path)

    source = resources.files(_PACKAGE).joinpath(f"{name}.toml")
    if not source.is_file():
        known = ", ".join(bundled_names())
        raise FileNotFoundError(
            f"No bundled configuration {name!r}; choose from {known}."
        )

    with resources.as_file(source) as bundled:
        return toml.load(bundled)
