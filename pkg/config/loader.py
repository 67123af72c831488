from pathlib import Path

from dynaconf import Dynaconf

CONFIG_DIR = Path(__file__).resolve().parent
DEFAULT_SETTINGS = CONFIG_DIR / "settings.toml"


def load_settings(extra_file: str | None = None, overrides: dict | None = None) -> Dynaconf:
    """
    Builds a fresh settings object from the defaults, an optional user
    TOML/JSON file layered on top, and dotted-key overrides
    (e.g. {"flow.n_max": 5}).
    """
    files = [str(DEFAULT_SETTINGS)]
    if extra_file:
        files.append(str(extra_file))
    run_settings = Dynaconf(settings_files=files, merge_enabled=True)
    for key, value in (overrides or {}).items():
        run_settings.set(key, value)
    return run_settings
