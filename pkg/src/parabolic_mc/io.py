"""Deterministic file outputs: CSV tables, JSON documents, trajectory dumps."""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

_HEADER = struct.Struct("<qqd")


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def write_csv(path, header, rows) -> Path:
    """'.' decimals, LF line endings, 17 significant digits."""
    path = Path(path)
    lines = [",".join(header)]
    lines += [",".join(format_value(v) for v in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_json(obj))
    return path


def write_trajectory_dump(path, states: np.ndarray, h: float) -> Path:
    """Header (d, n_steps as int64, h as float64) then row-major float64 states.

    ``states`` has shape (n_steps+1, d) or (n_paths, n_steps+1, d).
    """
    arr = np.ascontiguousarray(states, dtype="<f8")
    if arr.ndim == 2:
        arr = arr[None]
    n_steps, d = arr.shape[1] - 1, arr.shape[2]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(d, n_steps, float(h)))
        fh.write(arr.tobytes(order="C"))
    return Path(path)


def read_trajectory_dump(path) -> tuple[np.ndarray, float]:
    """Returns (states with shape (n_paths, n_steps+1, d), h)."""
    raw = Path(path).read_bytes()
    d, n_steps, h = _HEADER.unpack_from(raw, 0)
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return data.reshape(-1, n_steps + 1, d).copy(), h
