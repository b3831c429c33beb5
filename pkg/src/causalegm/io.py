"""CSV readers and writers for datasets, curves, traces and benchmark tables.

Every file starts with one ``#`` metadata line of ``key=value`` pairs (config
hash, seed, ...) followed by a header row. Floats are written with 17
significant digits so values round-trip exactly.
"""

from __future__ import annotations

import csv
import math
import re
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from causalegm.data import Dataset
from causalegm.errors import DataError, FormatError

FLOAT_FMT = "%.17g"


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % value
    return str(value)


def meta_line(meta: Mapping | None) -> str:
    items = " ".join(f"{k}={v}" for k, v in (meta or {}).items())
    return f"# {items}".rstrip()


def parse_meta(line: str) -> dict:
    body = line.lstrip("#").strip()
    return dict(tok.split("=", 1) for tok in body.split() if "=" in tok)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence], meta: Mapping | None = None,
                mode: str = "w") -> None:
    """Write (or with ``mode="a"``, append rows to) a CSV table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open(mode, newline="") as fh:
        if mode == "w":
            fh.write(meta_line(meta) + "\n")
            fh.write(",".join(header) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path) -> tuple[dict, list[str], list[tuple[int, list[str]]]]:
    """Return ``(meta, header, [(line_number, fields), ...])``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    meta: dict = {}
    header = None
    rows = []
    for lineno, fields in _numbered_rows(text):
        if fields and fields[0].startswith("#"):
            if header is None:
                meta.update(parse_meta(",".join(fields)))
            continue
        if not fields or fields == [""]:
            continue
        if header is None:
            header = [f.strip() for f in fields]
        else:
            rows.append((lineno, fields))
    if header is None:
        raise DataError(f"{path}: no header row")
    return meta, header, rows


def _numbered_rows(text):
    lines = text.splitlines()
    for i, fields in enumerate(csv.reader(lines)):
        yield i + 1, fields


def _parse_float(s: str, path, lineno: int, column: str) -> float:
    try:
        value = float(s)
    except ValueError:
        raise DataError(f"{path}:{lineno}: column {column!r}: cannot parse {s.strip()!r} as a number") from None
    if not math.isfinite(value):
        raise DataError(f"{path}:{lineno}: column {column!r}: non-finite value {s.strip()!r}")
    return value


def parse_numeric(path, header, rows, columns: Sequence[str]) -> np.ndarray:
    missing = [c for c in columns if c not in header]
    if missing:
        raise DataError(f"{path}: missing column(s): {', '.join(missing)}")
    idx = [header.index(c) for c in columns]
    out = np.empty((len(rows), len(columns)))
    for r, (lineno, fields) in enumerate(rows):
        if len(fields) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, found {len(fields)}")
        for c, (j, name) in enumerate(zip(idx, columns)):
            out[r, c] = _parse_float(fields[j], path, lineno, name)
    return out


def write_dataset(path, dataset: Dataset, meta: Mapping | None = None) -> None:
    header = ["x", "y"] + [f"v{j + 1}" for j in range(dataset.p)]
    rows = np.column_stack([dataset.x, dataset.y, dataset.v])
    write_table(path, header, rows.tolist(), meta)


_V_COL = re.compile(r"^v(\d+)$")


def read_dataset(path) -> Dataset:
    """Read an ``x,y,v1..vp`` CSV; covariate columns must be ``v1`` through ``vp``."""
    meta, header, rows = read_table(path)
    numbers = sorted(int(m.group(1)) for h in header if (m := _V_COL.match(h)))
    p = max(numbers, default=0)
    if p == 0:
        raise DataError(f"{path}: no covariate columns (expected v1..vp)")
    wanted = ["x", "y"] + [f"v{j}" for j in range(1, p + 1)]
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = parse_numeric(path, header, rows, wanted)
    seed = meta.get("seed")
    return Dataset(table[:, 2:], table[:, 0], table[:, 1], kind=meta.get("kind", "custom"),
                   seed=int(seed) if seed not in (None, "") and seed.lstrip("-").isdigit() else None)


def write_curve(path, xs, values, value_name: str, meta: Mapping | None = None) -> None:
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    write_table(path, ["x", value_name], np.column_stack([xs, values]).tolist(), meta)


def read_curve(path, value_name: str) -> tuple[np.ndarray, np.ndarray]:
    _, header, rows = read_table(path)
    table = parse_numeric(path, header, rows, ["x", value_name])
    return table[:, 0], table[:, 1]


def write_trace(path, trace, meta: Mapping | None = None) -> None:
    names = list(trace.losses)
    arr = np.column_stack([np.arange(1, len(trace) + 1)] + [np.asarray(trace.losses[k]) for k in names])
    rows = [[int(r[0]), *map(float, r[1:])] for r in arr]
    write_table(path, ["iteration", *names], rows, meta)


def write_effects(path, effects, meta: Mapping | None = None) -> None:
    rows = np.column_stack([effects.y0_hat, effects.y1_hat, effects.ite]).tolist()
    write_table(path, ["y0_hat", "y1_hat", "ite"], rows, meta)


BENCHMARK_HEADER = ("dataset", "method", "metric", "mean", "sd", "n_seeds")


def read_benchmark(path) -> list[dict]:
    _, header, rows = read_table(path)
    if tuple(header) != BENCHMARK_HEADER:
        raise FormatError(f"{path}: unexpected benchmark header {header}")
    out = []
    for lineno, f in rows:
        out.append({"dataset": f[0], "method": f[1], "metric": f[2],
                    "mean": _parse_float(f[3], path, lineno, "mean"), "sd": _parse_float(f[4], path, lineno, "sd"),
                    "n_seeds": int(f[5])})
    return out
