"""Wafer grids, probe-card touchdown geometry and measurement datasets.

Dies live on an integer grid.  A :class:`TouchdownLayout` lists the die
offsets probed by each site of the card during one touchdown; a
:class:`Tiling` places copies of the layout over the wafer so that every
die is probed by exactly one (anchor, site) pair.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class TilingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class Disc:
    """Round wafer: dies with ``(x-cx)**2 + (y-cy)**2 <= r**2``."""

    cx: int
    cy: int
    r: int

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("wafer radius must be positive")

    def contains(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 <= self.r**2

    @property
    def bounds(self) -> tuple[int, int, int, int]:
        """(xmin, ymin, xmax, ymax), inclusive."""
        return (self.cx - self.r, self.cy - self.r, self.cx + self.r, self.cy + self.r)

    def to_dict(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "r": self.r}


@dataclass(frozen=True)
class RectGrid:
    """Full rectangular grid ``0 <= x < width``, ``0 <= y < height``."""

    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid dimensions must be positive")

    def contains(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= 0) & (x < self.width) & (y >= 0) & (y < self.height)

    @property
    def bounds(self) -> tuple[int, int, int, int]:
        return (0, 0, self.width - 1, self.height - 1)

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height}


Geometry = Disc | RectGrid


def geometry_from_dict(d: dict) -> Geometry:
    if "r" in d:
        return Disc(int(d["cx"]), int(d["cy"]), int(d["r"]))
    if "width" in d:
        return RectGrid(int(d["width"]), int(d["height"]))
    raise ValueError(f"unrecognised geometry: {d!r}")


def die_coords(geometry: Geometry) -> np.ndarray:
    """All dies of `geometry` as an (n, 2) int array in row-major (y, x) order."""
    xmin, ymin, xmax, ymax = geometry.bounds
    ys, xs = np.mgrid[ymin : ymax + 1, xmin : xmax + 1]
    xs = xs.ravel()
    ys = ys.ravel()
    keep = geometry.contains(xs, ys)
    return np.column_stack([xs[keep], ys[keep]]).astype(np.int64)


# ---------------------------------------------------------------------------
# touchdown layout


@dataclass(frozen=True)
class TouchdownLayout:
    """Per-site die offsets of a single touchdown.

    The index of an offset is its site id.  `period` is the repeat cell of
    the tiling; it defaults to the bounding box of the offsets, which is
    the right choice for any layout that fills its bounding box.
    """

    offsets: tuple[tuple[int, int], ...]
    period: tuple[int, int] | None = None

    def __post_init__(self):
        offs = tuple((int(dx), int(dy)) for dx, dy in self.offsets)
        if not offs:
            raise TilingError("degenerate layout")
        if len(set(offs)) != len(offs):
            raise TilingError("layout offsets must be pairwise distinct")
        object.__setattr__(self, "offsets", offs)
        if self.period is None:
            arr = np.array(offs)
            span = arr.max(axis=0) - arr.min(axis=0) + 1
            object.__setattr__(self, "period", (int(span[0]), int(span[1])))
        else:
            px, py = self.period
            if px <= 0 or py <= 0:
                raise TilingError("layout period must be positive")
            object.__setattr__(self, "period", (int(px), int(py)))

    @property
    def site_count(self) -> int:
        return len(self.offsets)

    def to_dict(self) -> dict:
        return {"offsets": [list(o) for o in self.offsets], "period": list(self.period)}

    @classmethod
    def from_dict(cls, d: dict) -> "TouchdownLayout":
        offsets = d.get("offsets") or []
        period = d.get("period")
        return cls(tuple(tuple(o) for o in offsets), tuple(period) if period else None)


def single_site_layout() -> TouchdownLayout:
    return TouchdownLayout(((0, 0),))


def block_layout(width: int, height: int) -> TouchdownLayout:
    """Rectangular block of sites, numbered row-major."""
    return TouchdownLayout(tuple((x, y) for y in range(height) for x in range(width)))


def staggered16_layout() -> TouchdownLayout:
    """16 sites on a 6-die pitch with alternate rows shifted by half a pitch.

    Only an approximation of the 16-site card used in production: the real
    pattern is not dimensioned anywhere, so treat this as a stand-in.
    """
    offsets = tuple((6 * i + 3 * (j % 2), 6 * j) for j in range(4) for i in range(4))
    return TouchdownLayout(offsets, period=(24, 24))


BUILTIN_LAYOUTS = {
    "single": single_site_layout,
    "block2x2": lambda: block_layout(2, 2),
    "staggered16": staggered16_layout,
}


def load_layout(spec: str | Path) -> TouchdownLayout:
    """Built-in layout name or path to a layout JSON file."""
    if str(spec) in BUILTIN_LAYOUTS:
        return BUILTIN_LAYOUTS[str(spec)]()
    with open(spec) as f:
        return TouchdownLayout.from_dict(json.load(f))


# ---------------------------------------------------------------------------
# tiling


def _fill_shifts(layout: TouchdownLayout) -> list[tuple[int, int]]:
    # Greedy row-major packing of layout copies into one period cell (torus).
    px, py = layout.period
    covered = np.zeros((py, px), dtype=bool)
    shifts = []
    offs = np.array(layout.offsets)
    for ty in range(py):
        for tx in range(px):
            cx = (offs[:, 0] + tx) % px
            cy = (offs[:, 1] + ty) % py
            cells = set(zip(cx.tolist(), cy.tolist()))
            if len(cells) < len(offs) or covered[cy, cx].any():
                continue
            covered[cy, cx] = True
            shifts.append((tx, ty))
    if not covered.all():
        raise TilingError("layout does not tile its period")
    return shifts


@dataclass(frozen=True)
class Tiling:
    """Deterministic placement of touchdowns over a wafer.

    Anchors step row-major through period cells starting from the lower
    corner of the wafer bounds; within a cell, layout copies are packed at
    a fixed set of shifts.  ``anchor + offsets[s]`` is the die probed by
    site ``s``.
    """

    geometry: Geometry
    layout: TouchdownLayout
    anchors: np.ndarray  # (P, 2) int, sorted by (y, x)
    dies: np.ndarray  # (n, 2) in-geometry dies, row-major
    die_site: np.ndarray  # (n,) site id per die
    die_anchor: np.ndarray  # (n,) anchor index per die
    _index: dict = field(repr=False, compare=False, default_factory=dict)

    def site_of(self, coord) -> int:
        return site_of(coord, self)

    def anchor_dies(self, p: int) -> np.ndarray:
        """Indices (into `dies`) of the in-geometry dies probed by anchor `p`."""
        return np.flatnonzero(self.die_anchor == p)

    def die_index(self, coord) -> int:
        key = (int(coord[0]), int(coord[1]))
        try:
            return self._index[key]
        except KeyError:
            raise TilingError(f"outside tiling: {key}") from None

    def die_indices(self, coords) -> np.ndarray:
        return np.array([self.die_index(c) for c in np.asarray(coords)], dtype=np.int64)

    @property
    def n_anchors(self) -> int:
        return len(self.anchors)


def build_tiling(geometry: Geometry, layout: TouchdownLayout) -> Tiling:
    shifts = _fill_shifts(layout)
    px, py = layout.period
    xmin, ymin, _, _ = geometry.bounds
    dies = die_coords(geometry)
    offs = np.array(layout.offsets)
    shift_set = {(sx, sy) for sx, sy in shifts}

    S = len(offs)
    die_site = np.full(len(dies), -1, dtype=np.int64)
    die_anchor_xy = np.zeros((len(dies), 2), dtype=np.int64)
    for s in range(S):
        ax = dies[:, 0] - offs[s, 0]
        ay = dies[:, 1] - offs[s, 1]
        rx = (ax - xmin) % px
        ry = (ay - ymin) % py
        hit = np.array([(a, b) in shift_set for a, b in zip(rx.tolist(), ry.tolist())], dtype=bool)
        if np.any(hit & (die_site >= 0)):
            raise TilingError("layout copies overlap")  # cannot happen for a valid packing
        die_site[hit] = s
        die_anchor_xy[hit, 0] = ax[hit]
        die_anchor_xy[hit, 1] = ay[hit]
    if np.any(die_site < 0):
        raise TilingError("layout does not tile its period")

    uniq = np.unique(die_anchor_xy[:, [1, 0]], axis=0)[:, [1, 0]]  # sort by (y, x)
    lookup = {(int(x), int(y)): i for i, (x, y) in enumerate(uniq)}
    die_anchor = np.array([lookup[(int(x), int(y))] for x, y in die_anchor_xy], dtype=np.int64)
    index = {(int(x), int(y)): i for i, (x, y) in enumerate(dies)}
    return Tiling(geometry, layout, uniq.astype(np.int64), dies, die_site, die_anchor, index)


def enumerate_touchdowns(geometry: Geometry, layout: TouchdownLayout) -> np.ndarray:
    """Anchors of every touchdown that probes at least one in-geometry die."""
    return build_tiling(geometry, layout).anchors


def site_of(coord, tiling: Tiling) -> int:
    x, y = int(coord[0]), int(coord[1])
    if not tiling.geometry.contains(x, y):
        raise TilingError(f"outside tiling: {(x, y)}")
    return int(tiling.die_site[tiling.die_index((x, y))])


# ---------------------------------------------------------------------------
# measurements


@dataclass(frozen=True)
class Measurement:
    x: int
    y: int
    site: int
    value: float
    lot: int = 1
    wafer: int = 1

    @property
    def coord(self) -> tuple[int, int]:
        return (self.x, self.y)


CSV_HEADER = ["lot", "wafer", "x", "y", "site", "value"]


class MeasurementSet:
    """Column-oriented (coord, site, value) records of one wafer.

    Faulty or unmeasured dies are simply absent.  Instances are treated as
    immutable; the arrays are made read-only on construction.
    """

    def __init__(self, coords, sites, values, layout: TouchdownLayout, geometry: Geometry,
                 lot: int = 1, wafer: int = 1, check: bool = True):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
        sites = np.asarray(sites, dtype=np.int64).reshape(-1)
        values = np.asarray(values, dtype=float).reshape(-1)
        if not (len(coords) == len(sites) == len(values)):
            raise ValueError("coords, sites and values must have equal length")
        if lot < 1 or wafer < 1:
            raise ValueError("lot and wafer ids start at 1")
        if check:
            if not np.all(np.isfinite(values)):
                raise ValueError("measurement values must be finite")
            if len(np.unique(coords, axis=0)) != len(coords):
                raise ValueError("duplicate die coordinate in measurement set")
            if len(coords) and not np.all(geometry.contains(coords[:, 0], coords[:, 1])):
                raise TilingError("outside tiling: measurement off the wafer")
            if np.any((sites < 0) | (sites >= layout.site_count)):
                raise ValueError("site id out of range")
        for a in (coords, sites, values):
            a.setflags(write=False)
        self.coords = coords
        self.sites = sites
        self.values = values
        self.layout = layout
        self.geometry = geometry
        self.lot = int(lot)
        self.wafer = int(wafer)

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self) -> Iterator[Measurement]:
        return iter(self.records)

    @property
    def records(self) -> list[Measurement]:
        return [
            Measurement(int(x), int(y), int(s), float(v), self.lot, self.wafer)
            for (x, y), s, v in zip(self.coords, self.sites, self.values)
        ]

    @classmethod
    def from_records(cls, records: Iterable[Measurement], layout, geometry) -> "MeasurementSet":
        records = list(records)
        lots = {r.lot for r in records} or {1}
        wafers = {r.wafer for r in records} or {1}
        if len(lots) > 1 or len(wafers) > 1:
            raise ValueError("records span more than one wafer")
        return cls(
            [r.coord for r in records],
            [r.site for r in records],
            [r.value for r in records],
            layout,
            geometry,
            lot=lots.pop(),
            wafer=wafers.pop(),
        )

    def subset(self, idx) -> "MeasurementSet":
        idx = np.asarray(idx)
        return MeasurementSet(self.coords[idx], self.sites[idx], self.values[idx],
                              self.layout, self.geometry, self.lot, self.wafer, check=False)

    def with_values(self, values) -> "MeasurementSet":
        return MeasurementSet(self.coords, self.sites, values, self.layout, self.geometry,
                              self.lot, self.wafer)

    def value_range(self) -> float:
        return float(self.values.max() - self.values.min())

    def check_sites(self, tiling: Tiling) -> None:
        """Raise unless every record carries the site its tiling assigns."""
        expected = tiling.die_site[tiling.die_indices(self.coords)]
        bad = np.flatnonzero(expected != self.sites)
        if len(bad):
            x, y = self.coords[bad[0]]
            raise TilingError(f"site mismatch at {(int(x), int(y))}")

    def is_complete(self) -> bool:
        return len(self) == len(die_coords(self.geometry))

    # -- csv ---------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for (x, y), s, v in zip(self.coords.tolist(), self.sites.tolist(), self.values.tolist()):
            w.writerow([self.lot, self.wafer, x, y, s, repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, layout: TouchdownLayout, geometry: Geometry) -> "MeasurementSet":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [h.strip() for h in rows[0]] != CSV_HEADER:
            raise ValueError(f"expected CSV header {','.join(CSV_HEADER)}")
        body = [r for r in rows[1:] if r]
        lots = {int(r[0]) for r in body} or {1}
        wafers = {int(r[1]) for r in body} or {1}
        if len(lots) > 1 or len(wafers) > 1:
            raise ValueError("CSV spans more than one wafer")
        coords = [(int(r[2]), int(r[3])) for r in body]
        sites = [int(r[4]) for r in body]
        values = [float(r[5]) for r in body]
        return cls(coords, sites, values, layout, geometry, lot=lots.pop(), wafer=wafers.pop())


def read_csv(path, layout: TouchdownLayout, geometry: Geometry) -> MeasurementSet:
    with open(path, encoding="utf-8") as f:
        return MeasurementSet.from_csv(f.read(), layout, geometry)


def coord_keys(coords: Sequence) -> list[tuple[int, int]]:
    return [(int(x), int(y)) for x, y in np.asarray(coords)]
