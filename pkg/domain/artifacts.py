"""
Output files of a run. Every file carries the config hash and code version;
identical (config, seed) pairs produce byte-identical files.
"""
import json
import math
import os

import numpy as np
import pandas as pd

from domain import __version__
from utils.logger_config import get_logger

logger = get_logger(__name__)

FLOW_COLUMNS = ["n", "W_norm", "T0_plus_z", "slope_dev", "leak", "cond"]
FLOAT_FORMAT = "%.17g"


def plain(value):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [plain(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if hasattr(value, "value") and not isinstance(value, str):
        return value.value
    return value


def _stamp(document: dict, config_hash: str) -> dict:
    stamped = dict(document)
    stamped["config_hash"] = config_hash
    stamped["version"] = __version__
    return stamped


def write_json(path: str, document: dict, config_hash: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(plain(_stamp(document, config_hash)), handle, sort_keys=True, indent=2, allow_nan=False)
        handle.write("\n")
    logger.info("Wrote %s", path)
    return path


def write_table(path: str, frame: pd.DataFrame, config_hash: str) -> str:
    """CSV with a leading '# config_hash=... version=...' line (read back with comment='#')."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"# config_hash={config_hash} version={__version__}\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("Wrote %s (%d rows)", path, len(frame))
    return path


def read_table(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def flow_frame(states: list) -> pd.DataFrame:
    rows = [
        {
            "n": state.level,
            "W_norm": state.observables.w_norm,
            "T0_plus_z": state.observables.t0_plus_z,
            "slope_dev": state.observables.slope_dev,
            "leak": state.observables.leak,
            "cond": state.observables.hbar_condition,
        }
        for state in states
    ]
    return pd.DataFrame(rows, columns=FLOW_COLUMNS)


def run_directory(base: str, run_id: str, command: str) -> str:
    path = os.path.join(base, f"{command}-{run_id}")
    os.makedirs(path, exist_ok=True)
    return path
