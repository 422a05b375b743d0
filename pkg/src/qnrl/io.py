"""File formats: parameter checkpoints, CSV logs and JSON summaries."""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from qnrl.envs import ACTIONS, GridWorld, TabularQ
from qnrl.errors import InvalidInputError
from qnrl.trainer import CSV_COLUMNS, TrainLogRecord

CHECKPOINT_MAGIC = b"QNRL"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")


def write_checkpoint(path, w) -> None:
    """16-byte header (magic, u32 version, u64 length) then little-endian float64."""
    w = np.ascontiguousarray(w, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, w.shape[0]))
        fh.write(w.tobytes())


def read_checkpoint(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise InvalidInputError(f"{path}: too short to be a checkpoint")
    magic, version, n = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise InvalidInputError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise InvalidInputError(f"{path}: unsupported checkpoint version {version}")
    body = data[_HEADER.size:]
    if len(body) != 8 * n:
        raise InvalidInputError(f"{path}: header declares {n} values but body holds {len(body) / 8}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def write_train_log(path, records: list[TrainLogRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            row = asdict(rec)
            writer.writerow([format_value(row[c]) for c in CSV_COLUMNS])


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_q_table(path, env: GridWorld, oracle: TabularQ) -> None:
    """One row per (cell, action) over the whole grid; obstacle rows hold 0."""
    rows = []
    for y in range(env.height):
        for x in range(env.width):
            for a in range(len(ACTIONS)):
                rows.append((x, y, a, float(oracle[env.index((x, y))][a])))
    write_rows(path, ("state_x", "state_y", "action", "q"), rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
