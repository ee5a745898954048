"""Artifact emission: CSV with a fixed dialect, atomic writes, digests."""
from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from pathlib import Path

FLOAT_FMT = "%.17g"


def fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return FLOAT_FMT % x
    if hasattr(x, "item"):  # numpy scalar
        return fmt(x.item())
    return str(x)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def csv_text(header, rows, sep=",") -> str:
    lines = [sep.join(header)] if header else []
    for r in rows:
        lines.append(sep.join(fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows, dat_mirror: bool = False) -> list[Path]:
    """Write a CSV (comma, header, LF, 17 significant digits); optionally a
    whitespace-separated .dat mirror with a commented header for gnuplot."""
    rows = list(rows)
    path = Path(path)
    atomic_write_bytes(path, csv_text(header, rows).encode())
    written = [path]
    if dat_mirror:
        dat = path.with_suffix(".dat")
        body = "# " + " ".join(header) + "\n" + csv_text(None, rows, sep=" ")
        atomic_write_bytes(dat, body.encode())
        written.append(dat)
    return written


def read_csv(path):
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def write_json(path, obj) -> Path:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"
    atomic_write_bytes(path, text.encode())
    return Path(path)


def _json_default(o):
    if hasattr(o, "tolist"):  # numpy arrays and scalars
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
