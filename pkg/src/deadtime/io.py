"""CSV / JSON / binary serialization of events, histograms and results."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .simulate import EventSequence

FLOAT_FMT = "{:.9g}"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    """Write rows with floats at 9 significant digits and ``\\n`` line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_columns(path, columns: dict) -> Path:
    names = list(columns)
    return write_csv(path, names, zip(*(columns[k] for k in names)))


def read_csv_columns(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    return {name: np.array([float(r[i]) for r in rows]) for i, name in enumerate(header)}


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_events(path, events: EventSequence, fmt: str | None = None) -> Path:
    """Write absolute event times, one per line (CSV) or raw little-endian f64 (bin)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = fmt or ("bin" if path.suffix == ".bin" else "csv")
    if fmt == "bin":
        events.times.astype("<f8").tofile(path)
    else:
        with open(path, "w") as fh:
            fh.writelines(f"{t!r}\n" for t in events.times.tolist())
    return path


def read_events(path, t_r: float, n_r: int | None = None, fmt: str | None = None) -> EventSequence:
    path = Path(path)
    fmt = fmt or ("bin" if path.suffix == ".bin" else "csv")
    if fmt == "bin":
        times = np.fromfile(path, dtype="<f8")
    else:
        with open(path) as fh:
            times = np.array([float(line) for line in fh if line.strip()
                              and not line.startswith("#")])
    if n_r is None:
        n_r = int(times[-1] // t_r) + 1 if len(times) else 1
    return EventSequence(times, n_r, t_r)


def write_histogram(path, centers, values, value_name="count") -> Path:
    return write_columns(path, {"bin_center_ns": centers, value_name: values})


def read_histogram(path):
    """Read ``(bin_center_ns, value)`` CSV; returns ``(centers, values, t_bin)``."""
    cols = read_csv_columns(path)
    names = list(cols)
    if len(names) < 2 or names[0] != "bin_center_ns":
        raise ValueError(f"{path}: expected columns bin_center_ns,<value>")
    centers, values = cols[names[0]], cols[names[1]]
    if len(centers) < 2:
        raise ValueError(f"{path}: need at least two bins")
    t_bin = float(np.median(np.diff(centers)))
    return centers, values, t_bin


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
