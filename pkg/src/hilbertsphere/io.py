"""Density tables on disk, square-root ingestion and run manifests.

Two CSV layouts are understood:

``csv_wide``
    line 1: zone labels (or abscissae), line 2: zone weights, then one
    observation per line.
``csv_long``
    a header containing ``obs_id,zone,value`` and optionally ``weight``; zones
    missing for an observation count as zero.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FormatError, ValidationError
from .estimation import SampleSet
from .grid import Grid

FORMATS = ("csv_wide", "csv_long")


@dataclass(frozen=True, eq=False)
class DensityTable:
    """Raw rows, their normalized densities and the zone grid."""

    grid: Grid
    raw: np.ndarray
    densities: np.ndarray
    obs_ids: tuple

    def __len__(self):
        return self.raw.shape[0]


def _number(text: str, line: int, col: int) -> float:
    try:
        x = float(text)
    except ValueError:
        raise FormatError(f"line {line}: column {col + 1} is not a number: {text!r}") from None
    if not math.isfinite(x):
        raise FormatError(f"line {line}: column {col + 1} is not finite")
    return x


def _grid_from(labels, weights) -> Grid:
    try:
        pts = np.array([float(x) for x in labels])
    except ValueError:
        pts = None
    if pts is not None and pts.size > 1 and np.all(np.diff(pts) > 0):
        return Grid(pts, weights, tuple(labels))
    return Grid.zones(labels, weights)


def _rows(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
                continue
            yield lineno, [c.strip() for c in row]


def _read_wide(path: Path):
    rows = list(_rows(path))
    if len(rows) < 3:
        raise FormatError("csv_wide needs a label line, a weight line and at least one observation")
    (_, labels), (wline, wrow), *obs = rows
    d = len(labels)
    if len(wrow) != d:
        raise FormatError(f"line {wline}: expected {d} weights, found {len(wrow)}")
    weights = np.array([_number(c, wline, j) for j, c in enumerate(wrow)])
    if np.any(weights <= 0):
        raise ValidationError(f"line {wline}: zone weights must be positive")
    data = []
    for lineno, row in obs:
        if len(row) != d:
            raise FormatError(f"line {lineno}: expected {d} values, found {len(row)}")
        data.append([_number(c, lineno, j) for j, c in enumerate(row)])
    ids = tuple(str(i) for i in range(len(data)))
    return _grid_from(labels, weights), np.array(data), ids


def _read_long(path: Path):
    rows = list(_rows(path))
    if not rows:
        raise FormatError("empty csv_long file")
    hline, header = rows[0]
    cols = {name.lower(): j for j, name in enumerate(header)}
    for need in ("obs_id", "zone", "value"):
        if need not in cols:
            raise FormatError(f"line {hline}: csv_long header must contain {need!r}")
    io_, iz, iv, iw = cols["obs_id"], cols["zone"], cols["value"], cols.get("weight")
    obs, zones, zone_w, cells = {}, {}, {}, {}
    for lineno, row in rows[1:]:
        if len(row) != len(header):
            raise FormatError(f"line {lineno}: expected {len(header)} fields, found {len(row)}")
        o, z = row[io_], row[iz]
        obs.setdefault(o, len(obs))
        zones.setdefault(z, len(zones))
        if (o, z) in cells:
            raise FormatError(f"line {lineno}: duplicate entry for observation {o!r}, zone {z!r}")
        cells[(o, z)] = (_number(row[iv], lineno, iv), lineno)
        if iw is not None:
            w = _number(row[iw], lineno, iw)
            if zone_w.setdefault(z, w) != w:
                raise FormatError(f"line {lineno}: inconsistent weight for zone {z!r}")
    labels = list(zones)
    if iw is not None:
        weights = np.array([zone_w[z] for z in labels])
        if np.any(weights <= 0):
            raise ValidationError("zone weights must be positive")
    else:
        weights = None
    data = np.zeros((len(obs), len(labels)))
    for (o, z), (val, _) in cells.items():
        data[obs[o], zones[z]] = val
    grid = Grid.zones(labels, weights)
    return grid, data, tuple(obs)


def read_density_table(path, format: str = "csv_wide", strict_positive: bool = False) -> DensityTable:
    """Parse counts or densities and normalize each row to integrate to one."""
    path = Path(path)
    if format not in FORMATS:
        raise ValidationError(f"unknown format {format!r}; expected one of {FORMATS}")
    grid, data, ids = (_read_wide if format == "csv_wide" else _read_long)(path)
    neg = np.argwhere(data < 0)
    if neg.size:
        i, j = neg[0]
        raise ValidationError("negative entry", row=int(i) + 1, column=grid.labels[j])
    if strict_positive:
        zero = np.argwhere(data == 0)
        if zero.size:
            i, j = zero[0]
            raise ValidationError("zero entry with strict positivity requested", row=int(i) + 1, column=grid.labels[j])
    mass = data @ grid.weights
    empty = np.flatnonzero(mass <= 0)
    if empty.size:
        raise ValidationError("observation has no positive entry", row=int(empty[0]) + 1)
    return DensityTable(grid, data, data / mass[:, None], ids)


def densities_to_sample(table: DensityTable) -> SampleSet:
    """Square-root transform; rows are renormalized to unit quadrature norm."""
    return SampleSet.from_coords(table.grid, table.grid.to_coords(np.sqrt(table.densities)))


def ingest_densities(path, format: str = "csv_wide", strict_positive: bool = False):
    """Read a density file and return ``(SampleSet, DensityTable)``."""
    table = read_density_table(path, format, strict_positive)
    return densities_to_sample(table), table


def format_float(x: float) -> str:
    return repr(float(x))


def write_function_csv(path, grid: Grid, values, header=("abscissa", "value")):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for label, v in zip(grid.labels, np.asarray(values, dtype=float)):
            w.writerow([label, format_float(v)])


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, obj):
    Path(path).write_text(dump_json(obj), encoding="utf-8")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    """What was run, on what, with which seed; ``timings`` is the only non-reproducible part."""

    command: str
    config: dict
    seed: int | None
    library_version: str = __version__
    input_digests: dict = field(default_factory=dict)
    environment: dict = field(default_factory=lambda: {"python": platform.python_version(), "numpy": np.__version__})
    timings: dict = field(default_factory=dict)

    def add_input(self, path):
        self.input_digests[str(path)] = file_digest(path)

    def write(self, directory):
        write_json(Path(directory) / "manifest.json", asdict(self))
