"""
Utility functions for PQDS quadrature dataset files and tabular outputs.

PQDS layout (little endian): magic b"PQDS", u32 format version, u64 record
count, then per record four float64 values (x_A, x_B, phi_A, phi_B). A JSON
sidecar with the same stem carries the convention, seed, spec, noise model and
the run configuration.
"""
import csv
import io
import json
import logging
import os
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from phasecorr import __version__
from phasecorr.config import QUADRATURE_CONVENTION, SCHEMA_VERSION
from phasecorr.core.errors import DatasetFormatError
from phasecorr.gaussian_sim import (AsymmetricSource, PhaseNoiseModel,
                                    QuadratureDataset, SqueezingSpec)

logger = logging.getLogger(__name__)

PQDS_MAGIC = b"PQDS"
PQDS_VERSION = 1
HEADER = struct.Struct('<4sIQ')
RECORD_DTYPE = np.dtype('<f8')

SUPPORTED_EXTENSIONS = {'.pqds'}

PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix('.json')


def _atomic_write(path: Path, blob: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + f".tmp{os.getpid()}")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def dumps_json(payload: Dict[str, Any]) -> str:
    """Deterministic JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_dataset(path: PathLike, ds: QuadratureDataset, config: Optional[Dict[str, Any]] = None) -> Path:
    """Write the PQDS file and its JSON sidecar; returns the dataset path."""
    path = Path(path)
    header = HEADER.pack(PQDS_MAGIC, PQDS_VERSION, len(ds))
    _atomic_write(path, header + ds.records.astype(RECORD_DTYPE, copy=False).tobytes())
    sidecar = ds.metadata()
    sidecar["version"] = __version__
    sidecar["config"] = config
    _atomic_write(sidecar_path(path), dumps_json(sidecar).encode())
    logger.info(f"Wrote {len(ds)} records to {path}")
    return path


def _read_header(raw: bytes, path: Path) -> int:
    if len(raw) < HEADER.size:
        raise DatasetFormatError(f"{path} is too short to hold a PQDS header")
    magic, version, count = HEADER.unpack_from(raw)
    if magic != PQDS_MAGIC:
        raise DatasetFormatError(f"{path} is not a PQDS file (magic {magic!r})")
    if version != PQDS_VERSION:
        raise DatasetFormatError(f"{path} has unsupported PQDS version {version}")
    expected = HEADER.size + count * 4 * RECORD_DTYPE.itemsize
    if len(raw) != expected:
        raise DatasetFormatError(f"{path} holds {len(raw)} bytes, header promises {expected}")
    if count == 0:
        raise DatasetFormatError(f"{path} holds no records")
    return count


def _spec_from_sidecar(meta: Dict[str, Any]):
    spec = meta.get("spec")
    if spec is None:
        return None
    if meta.get("spec_kind") == "AsymmetricSource":
        return AsymmetricSource.model_validate(spec)
    return SqueezingSpec.model_validate(spec)


def read_sidecar(path: PathLike) -> Dict[str, Any]:
    side = sidecar_path(path)
    if not side.is_file():
        return {}
    try:
        return json.loads(side.read_text())
    except ValueError as e:
        raise DatasetFormatError(f"Malformed sidecar {side}: {e}")


def read_dataset(path: PathLike) -> QuadratureDataset:
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(f"Dataset not found: {path}")
    raw = path.read_bytes()
    count = _read_header(raw, path)
    records = np.frombuffer(raw, dtype=RECORD_DTYPE, offset=HEADER.size).reshape(count, 4).astype(np.float64)
    phases = records[:, 2:]
    if np.any(~np.isfinite(records)) or np.any(phases < 0) or np.any(phases >= 2 * np.pi):
        raise DatasetFormatError(f"{path} holds non-finite values or phases outside [0, 2 pi)")
    meta = read_sidecar(path)
    try:
        spec = _spec_from_sidecar(meta)
        noise = PhaseNoiseModel.model_validate(meta.get("noise") or {})
    except PydanticValidationError as e:
        raise DatasetFormatError(f"Sidecar of {path} does not validate: {e}")
    convention = meta.get("convention", QUADRATURE_CONVENTION)
    logger.info(f"Read {count} records from {path}")
    return QuadratureDataset(records, meta.get("seed"), spec, noise, convention)


def validate_dataset(path: PathLike) -> None:
    """Raise DatasetFormatError unless `path` is a readable PQDS file with consistent size."""
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(f"Dataset not found: {path}")
    with path.open('rb') as handle:
        head = handle.read(HEADER.size)
    if len(head) < HEADER.size:
        raise DatasetFormatError(f"{path} is too short to hold a PQDS header")
    magic, version, count = HEADER.unpack(head)
    if magic != PQDS_MAGIC or version != PQDS_VERSION:
        raise DatasetFormatError(f"{path} is not a supported PQDS file")
    expected = HEADER.size + count * 4 * RECORD_DTYPE.itemsize
    if path.stat().st_size != expected or count == 0:
        raise DatasetFormatError(f"{path} size does not match its record count {count}")


def is_supported_dataset(path: PathLike) -> bool:
    try:
        if Path(path).suffix.lower() not in SUPPORTED_EXTENSIONS:
            with open(path, 'rb') as handle:
                if handle.read(4) != PQDS_MAGIC:
                    return False
        validate_dataset(path)
        return True
    except OSError:
        return False


def _format_value(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_table(path: PathLike, columns: Sequence[str], rows: Sequence[Tuple[Any, ...]],
                config: Optional[Dict[str, Any]] = None, fmt: str = "csv") -> Path:
    """
    Write rows as CSV ('# config:' and '# version:' comment lines, then a header) or as JSON
    {schema_version, version, config, columns, rows}.
    """
    path = Path(path)
    if fmt == "json":
        path = path.with_suffix('.json')
        payload = {"schema_version": SCHEMA_VERSION, "version": __version__, "config": config,
                   "columns": list(columns), "rows": [list(r) for r in rows]}
        _atomic_write(path, dumps_json(payload).encode())
        return path
    if fmt != "csv":
        raise ValueError(f"Unknown table format {fmt!r}")
    path = path.with_suffix('.csv')
    buffer = io.StringIO()
    buffer.write(f"# config: {json.dumps(config, sort_keys=True, default=_json_default)}\n")
    buffer.write(f"# version: {__version__}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_value(v) for v in row])
    _atomic_write(path, buffer.getvalue().encode())
    return path


def write_json(path: PathLike, payload: Dict[str, Any], config: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path).with_suffix('.json')
    document = {"schema_version": SCHEMA_VERSION, "version": __version__, "config": config}
    document.update(payload)
    _atomic_write(path, dumps_json(document).encode())
    return path


def read_embedded_config(path: PathLike) -> Dict[str, Any]:
    """Run configuration embedded in any output file (CSV comment, JSON field or dataset sidecar)."""
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(f"Output file not found: {path}")
    if path.suffix.lower() in SUPPORTED_EXTENSIONS:
        config = read_sidecar(path).get("config")
    elif path.suffix.lower() == '.csv':
        first = path.read_text().splitlines()[:1]
        if not first or not first[0].startswith("# config: "):
            raise DatasetFormatError(f"{path} has no embedded configuration line")
        config = json.loads(first[0][len("# config: "):])
    else:
        try:
            config = json.loads(path.read_text()).get("config")
        except ValueError as e:
            raise DatasetFormatError(f"{path} is not valid JSON: {e}")
    if not config:
        raise DatasetFormatError(f"{path} carries no run configuration")
    return config
