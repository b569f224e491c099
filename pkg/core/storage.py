"""
Artifact writing and loading.

Every artifact carries the hash of the configuration that produced it and the
seed: JSON files as top-level fields, CSV files as leading comment lines.
Floats are written with 17 significant digits so that reloading is bit-exact.
"""
import hashlib
import io
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import orjson
import pandas as pd
from pydantic import BaseModel

from core.errors import ConfigError
from core.measure import AtomicMeasure

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def config_hash(config: Union[str, bytes, Dict[str, Any], BaseModel]) -> str:
    """sha256 of a config text, or of the canonical JSON of a mapping or model."""
    if isinstance(config, BaseModel):
        config = config.model_dump(mode="json")
    if isinstance(config, dict):
        payload = orjson.dumps(config, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY)
    elif isinstance(config, str):
        payload = config.encode("utf-8")
    else:
        payload = config
    return hashlib.sha256(payload).hexdigest()


def dumps(payload: Any) -> bytes:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return orjson.dumps(
        payload,
        option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_APPEND_NEWLINE,
    )


def write_json(path: Path, payload: Any, cfg_hash: str, seed: Optional[int]) -> Path:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    record = {"config_hash": cfg_hash, "seed": seed, "result": payload}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(record))
    logger.info("Wrote %s", path)
    return path


def read_json(path: Path) -> Dict[str, Any]:
    return orjson.loads(Path(path).read_bytes())


def write_csv(path: Path, frame: pd.DataFrame, cfg_hash: str, seed: Optional[int]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.StringIO()
    buffer.write(f"# config_hash={cfg_hash}\n")
    buffer.write(f"# seed={seed}\n")
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    path.write_text(buffer.getvalue(), encoding="utf-8")
    logger.info("Wrote %s (%d rows)", path, len(frame))
    return path


def read_csv(path: Path) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """Frame plus the metadata from the leading comment lines."""
    path = Path(path)
    meta: Dict[str, str] = {}
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    return frame, meta


def save_measure(path: Path, mu: AtomicMeasure, cfg_hash: str, seed: Optional[int]) -> Path:
    return write_csv(path, mu.to_frame(), cfg_hash, seed)


def load_measure(path: Path) -> AtomicMeasure:
    frame, meta = read_csv(path)
    if "weight" not in frame.columns:
        raise ConfigError(f"{path} is not a measure file (no weight column)")
    return AtomicMeasure.from_frame(frame, label=Path(path).stem)
