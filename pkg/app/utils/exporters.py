"""
CSV and JSON writers for run artifacts.

Every CSV starts with a ``# config-hash: <hash>`` comment line followed by
the header row; files are UTF-8, comma separated, '.' decimal.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Mapping

import pandas as pd

logger = logging.getLogger(__name__)


def config_hash(config: Mapping[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def write_csv(frame: pd.DataFrame, path: str | Path, hash_value: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"# config-hash: {hash_value}\n")
        frame.to_csv(handle, index=False, float_format="%.12g", lineterminator="\n")
    logger.debug("wrote %s (%d rows)", path, len(frame))
    return path


def read_csv(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_json(payload: Mapping[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2, allow_nan=True)
        handle.write("\n")
    return path
