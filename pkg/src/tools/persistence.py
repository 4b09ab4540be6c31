"""Artifact persistence: field CSV, BJSF1 binary fields and the output manifest"""
import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from src.models import PersistenceError

logger = logging.getLogger(__name__)

MAGIC = b"BJSF1"
FLOAT_FORMAT = "%.17g"
MANIFEST_NAME = "manifest.json"


# ============================================================================
# Field files
# ============================================================================

def write_field_csv(path: str | Path, times: np.ndarray, values: np.ndarray) -> Path:
    """
    Write a space-time field as CSV with columns ``time, x_0, ..., x_{n-1}``.

    Args:
        path: Output file
        times: Row times, shape ``(n_times,)``
        values: Field values, shape ``(n_times, n_space)``

    Returns:
        Path to the written file
    """
    path = Path(path)
    values = np.atleast_2d(values)
    frame = pd.DataFrame(values, columns=[f"x_{i}" for i in range(values.shape[1])])
    frame.insert(0, "time", np.asarray(times, dtype=np.float64))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise PersistenceError(path, f"cannot write CSV: {e}") from e
    logger.debug(f"Field CSV written: {path}")
    return path


def write_field_triples(path: str | Path, times: np.ndarray, values: np.ndarray, x: np.ndarray) -> Path:
    """Write a space-time field in long form with columns ``t, x, value``."""
    values = np.atleast_2d(values)
    frame = pd.DataFrame(
        {
            "t": np.repeat(np.asarray(times, dtype=np.float64), values.shape[1]),
            "x": np.tile(np.asarray(x, dtype=np.float64), values.shape[0]),
            "value": values.ravel(),
        }
    )
    return write_table(path, frame)


def read_field_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a field CSV back into ``(times, values)``."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise PersistenceError(path, f"cannot read CSV: {e}") from e
    if frame.columns[0] != "time":
        raise PersistenceError(path, "first column must be 'time'")
    return frame["time"].to_numpy(), frame.drop(columns="time").to_numpy()


def write_field_binary(path: str | Path, times: np.ndarray, values: np.ndarray) -> Path:
    """Write ``MAGIC``, two little-endian ``u64`` sizes, then times and values as ``<f8``."""
    path = Path(path)
    values = np.atleast_2d(np.asarray(values, dtype="<f8"))
    times = np.asarray(times, dtype="<f8")
    if times.shape != (values.shape[0],):
        raise PersistenceError(path, f"{times.shape[0]} times for {values.shape[0]} rows")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<QQ", values.shape[0], values.shape[1]))
            f.write(times.tobytes())
            f.write(values.tobytes())
    except OSError as e:
        raise PersistenceError(path, f"cannot write binary field: {e}") from e
    return path


def read_field_binary(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise PersistenceError(path, f"cannot read binary field: {e}") from e
    if not data.startswith(MAGIC):
        raise PersistenceError(path, "not a BJSF1 file")
    header_end = len(MAGIC) + 16
    n_times, n_space = struct.unpack("<QQ", data[len(MAGIC):header_end])
    expected = header_end + 8 * n_times * (n_space + 1)
    if len(data) != expected:
        raise PersistenceError(path, f"truncated file: {len(data)} bytes, expected {expected}")
    payload = np.frombuffer(data, dtype="<f8", offset=header_end)
    return payload[:n_times].copy(), payload[n_times:].reshape(n_times, n_space).copy()


# ============================================================================
# Tables and manifest
# ============================================================================

def write_table(path: str | Path, frame: pd.DataFrame) -> Path:
    """Write a tidy table with full float precision."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise PersistenceError(path, f"cannot write table: {e}") from e
    return path


def sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: str | Path, artifacts: list[Path], metadata: dict[str, Any] | None = None) -> Path:
    """
    List artifacts with their SHA-256 hashes in ``manifest.json``.

    Existing manifest entries for other artifacts are kept.
    """
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_NAME
    manifest = read_manifest(out_dir) if manifest_path.exists() else {"artifacts": {}}
    for artifact in artifacts:
        artifact = Path(artifact)
        try:
            relative = artifact.relative_to(out_dir).as_posix()
        except ValueError:
            relative = artifact.as_posix()
        manifest["artifacts"][relative] = {"sha256": sha256(artifact), "bytes": artifact.stat().st_size}
    if metadata:
        manifest.setdefault("runs", {}).update(metadata)
    try:
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    except OSError as e:
        raise PersistenceError(manifest_path, f"cannot write manifest: {e}") from e
    return manifest_path


def read_manifest(out_dir: str | Path) -> dict[str, Any]:
    path = Path(out_dir) / MANIFEST_NAME
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise PersistenceError(path, f"cannot read manifest: {e}") from e


def verify_manifest(out_dir: str | Path) -> list[str]:
    """Return the artifacts whose current hash differs from the manifest."""
    out_dir = Path(out_dir)
    manifest = read_manifest(out_dir)
    return [
        name
        for name, entry in manifest["artifacts"].items()
        if not (out_dir / name).exists() or sha256(out_dir / name) != entry["sha256"]
    ]
