"""Simulation tables, distances, nearest-neighbour selection and table I/O."""

from __future__ import annotations

import csv
import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "TableFormatError",
    "SimulationTable",
    "euclidean_distance",
    "distances_to",
    "select_k_nearest",
    "save_table",
    "load_table",
    "rng_stream",
    "stream_key",
]

BINARY_MAGIC = b"LFIT1"


class DimensionError(ValueError):
    """Array shapes do not agree."""


class TableFormatError(ValueError):
    """A table file could not be parsed.

    ``row`` and ``column`` are 1-based file positions when known.
    """

    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass(frozen=True, eq=False)
class SimulationTable:
    """N parameter vectors paired with N summary vectors.

    The arrays are copied and marked read-only on construction, so a table
    can be shared between workers without defensive copies.
    """

    params: np.ndarray
    summaries: np.ndarray
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        params = np.array(self.params, dtype=np.float64, ndmin=2, copy=True)
        summaries = np.array(self.summaries, dtype=np.float64, ndmin=2, copy=True)
        if params.ndim != 2 or summaries.ndim != 2:
            raise DimensionError("params and summaries must be 2-D")
        if params.shape[0] != summaries.shape[0]:
            raise DimensionError(
                f"params has {params.shape[0]} rows but summaries has {summaries.shape[0]}"
            )
        if params.shape[0] < 1:
            raise DimensionError("a simulation table needs at least one row")
        if not np.all(np.isfinite(params)):
            raise ValueError("parameter values must be finite")
        params.flags.writeable = False
        summaries.flags.writeable = False
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "summaries", summaries)
        object.__setattr__(self, "meta", {str(k): str(v) for k, v in dict(self.meta).items()})

    @property
    def n_sims(self) -> int:
        return self.params.shape[0]

    @property
    def n_params(self) -> int:
        return self.params.shape[1]

    @property
    def n_summaries(self) -> int:
        return self.summaries.shape[1]

    @property
    def summary_names(self) -> list[str]:
        names = self.meta.get("summary_names")
        if names:
            return names.split(",")
        return [f"s_{j + 1}" for j in range(self.n_summaries)]

    def subset(self, rows=None, columns=None, **meta: str) -> "SimulationTable":
        """Rows and/or summary columns of this table as a new table."""
        rows = slice(None) if rows is None else rows
        summaries = self.summaries[rows]
        new_meta = dict(self.meta)
        if columns is not None:
            summaries = summaries[:, columns]
            names = np.asarray(self.summary_names)[columns]
            new_meta["summary_names"] = ",".join(names)
        new_meta.update(meta)
        return SimulationTable(self.params[rows], summaries, new_meta)

    def equals(self, other: "SimulationTable") -> bool:
        return (
            np.array_equal(self.params, other.params)
            and np.array_equal(self.summaries, other.summaries, equal_nan=True)
            and dict(self.meta) == dict(other.meta)
        )


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    return float(math.sqrt(np.sum((a - b) ** 2)))


def distances_to(points: np.ndarray, target) -> np.ndarray:
    """Euclidean distance from every row of ``points`` to ``target``."""
    points = np.asarray(points, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).ravel()
    if points.ndim != 2 or points.shape[1] != target.size:
        raise DimensionError(f"cannot compare rows of shape {points.shape} with a {target.size}-vector")
    diff = points - target
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def select_k_nearest(distances, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest distances.

    The result is ordered by ascending distance; equal distances are ordered
    by ascending index, which also decides who gets in at the k-th place.
    Infinite distances are allowed (used to mask rows out) but NaN is not.
    """
    d = np.asarray(distances, dtype=np.float64).ravel()
    n = d.size
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if np.isnan(d).any():
        raise ValueError("distances contain NaN")
    if k == n:
        return np.lexsort((np.arange(n), d))
    kth = np.partition(d, k - 1)[k - 1]
    below = np.flatnonzero(d < kth)
    ties = np.flatnonzero(d == kth)[: k - below.size]
    idx = np.concatenate([below, ties])
    return idx[np.lexsort((idx, d[idx]))]


def stream_key(*parts: int | str) -> list[int]:
    """Integer entropy words for ``parts``; strings are CRC32-hashed."""
    key = []
    for part in parts:
        if isinstance(part, str):
            key.append(zlib.crc32(part.encode("utf-8")))
        else:
            key.append(int(part))
    return key


def rng_stream(master_seed: int, *parts: int | str) -> np.random.Generator:
    """Independent generator for the stream named by ``(master_seed, *parts)``.

    The derivation is ``SeedSequence([master_seed, *parts])`` with string parts
    replaced by their CRC32, so streams never depend on evaluation order or on
    how many workers are used.
    """
    return np.random.default_rng(np.random.SeedSequence(stream_key(master_seed, *parts)))


# --- persistence -----------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def save_table(table: SimulationTable, path, fmt: str | None = None) -> Path:
    """Write ``table`` as CSV (interchange) or the LFIT1 binary cache.

    The format is taken from ``fmt`` or from the suffix (``.lfit``/``.bin``
    select binary). A ``<name>.columns.txt`` sidecar listing the summary
    columns in order is written next to the table.
    """
    path = Path(path)
    if fmt is None:
        fmt = "binary" if path.suffix in (".lfit", ".bin") else "csv"
    if fmt == "csv":
        _save_csv(table, path)
    elif fmt == "binary":
        _save_binary(table, path)
    else:
        raise ValueError(f"unknown table format {fmt!r}")
    sidecar = path.with_name(path.name + ".columns.txt")
    sidecar.write_text("\n".join(table.summary_names) + "\n")
    return path


def load_table(path, fmt: str | None = None) -> SimulationTable:
    path = Path(path)
    if fmt is None:
        with open(path, "rb") as fh:
            head = fh.read(len(BINARY_MAGIC))
        fmt = "binary" if head == BINARY_MAGIC else "csv"
    if fmt == "binary":
        return _load_binary(path)
    return _load_csv(path)


def _save_csv(table: SimulationTable, path: Path) -> None:
    d, q = table.n_params, table.n_summaries
    with open(path, "w", newline="") as fh:
        for key in sorted(table.meta):
            value = table.meta[key]
            if "\n" in value:
                raise ValueError(f"metadata value for {key!r} contains a newline")
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"theta_{j + 1}" for j in range(d)] + [f"s_{j + 1}" for j in range(q)])
        for theta, s in zip(table.params, table.summaries):
            writer.writerow([_fmt(x) for x in theta] + [_fmt(x) for x in s])


def _load_csv(path: Path) -> SimulationTable:
    meta: dict[str, str] = {}
    header = None
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if header is None and line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if not sep:
                    raise TableFormatError("metadata line must look like '# key=value'", row=lineno)
                meta[key.strip()] = value
                continue
            if not line.strip():
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = cells
                d = sum(1 for c in cells if c.startswith("theta_"))
                q = sum(1 for c in cells if c.startswith("s_"))
                expected = [f"theta_{j + 1}" for j in range(d)] + [f"s_{j + 1}" for j in range(q)]
                if cells != expected or d == 0:
                    raise TableFormatError(
                        "header must be theta_1..theta_d followed by s_1..s_q", row=lineno
                    )
                continue
            if len(cells) != len(header):
                raise TableFormatError(
                    f"expected {len(header)} fields, found {len(cells)}", row=lineno
                )
            values = []
            for col, cell in enumerate(cells, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise TableFormatError(f"not a number: {cell!r}", row=lineno, column=col) from None
            rows.append(values)
    if header is None:
        raise TableFormatError("empty table file: no header")
    if not rows:
        raise TableFormatError("table file has a header but no data rows")
    data = np.asarray(rows, dtype=np.float64)
    return SimulationTable(data[:, :d], data[:, d:], meta)


def _save_binary(table: SimulationTable, path: Path) -> None:
    meta = json.dumps(dict(table.meta), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<QII", table.n_sims, table.n_params, table.n_summaries))
        fh.write(table.params.astype("<f8").tobytes())
        fh.write(table.summaries.astype("<f8").tobytes())


def _load_binary(path: Path) -> SimulationTable:
    raw = path.read_bytes()
    if not raw:
        raise TableFormatError("empty table file")
    if raw[: len(BINARY_MAGIC)] != BINARY_MAGIC:
        raise TableFormatError("bad magic bytes; not an LFIT1 file")
    pos = len(BINARY_MAGIC)
    try:
        (meta_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        meta = json.loads(raw[pos : pos + meta_len].decode("utf-8"))
        pos += meta_len
        n, d, q = struct.unpack_from("<QII", raw, pos)
        pos += 16
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TableFormatError(f"corrupt LFIT1 header: {exc}") from None
    expected = pos + 8 * n * (d + q)
    if len(raw) != expected:
        raise TableFormatError(f"LFIT1 payload is {len(raw)} bytes, header implies {expected}")
    params = np.frombuffer(raw, dtype="<f8", count=n * d, offset=pos).reshape(n, d)
    summaries = np.frombuffer(raw, dtype="<f8", count=n * q, offset=pos + 8 * n * d).reshape(n, q)
    return SimulationTable(params, summaries, meta)


def as_index_array(indices: Sequence[int] | np.ndarray, n: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.intp).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"indices must lie in [0, {n})")
    if np.unique(idx).size != idx.size:
        raise ValueError("indices must be unique")
    return idx
