"""Synthetic wafers with a smooth spatial trend, dominant per-site offsets
and lot-to-lot drift of a few sites.

value(die) = trend(u, v) + offset[site] + drift[lot][site] + N(0, sigma[site])

with ``u = (x - cx) / r``, ``v = (y - cy) / r`` and trend
``a * (u**2 + v**2) + b * u + c * v + d``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .wafer import (
    Disc,
    MeasurementSet,
    TouchdownLayout,
    build_tiling,
    geometry_from_dict,
    staggered16_layout,
)

# Evenly spaced levels 0.06 apart, scattered over the site ids so adjacent
# needles do not carry adjacent offsets.
DEFAULT_OFFSETS = tuple(0.06 * k for k in (7, 2, 12, 5, 0, 14, 9, 3, 11, 6, 15, 1, 10, 4, 13, 8))
DRIFT_SITES = (3, 9, 14)
DRIFT_SIGNS = (+1.0, +1.0, -1.0)


def default_drift(n_sites: int = 16, lots: int = 6, amplitude: float = 0.6,
                  sites=DRIFT_SITES, signs=DRIFT_SIGNS, start: int = 3) -> dict[int, tuple[float, ...]]:
    """Per-lot offset deltas: flat for lots before `start`, then a linear ramp."""
    drift = {}
    for lot in range(1, lots + 1):
        d = [0.0] * n_sites
        if lot >= start:
            frac = (lot - start + 1) / (lots - start + 1)
            for s, sign in zip(sites, signs):
                d[s] = sign * amplitude * frac
        drift[lot] = tuple(d)
    return drift


@dataclass(frozen=True)
class SynthConfig:
    geometry: Disc = Disc(0, 0, 44)
    layout: TouchdownLayout = field(default_factory=staggered16_layout)
    trend: tuple[float, float, float, float] = (0.045, 0.015, -0.01, 0.0)
    site_offsets: tuple[float, ...] = DEFAULT_OFFSETS
    site_sigma: tuple[float, ...] = (0.004,) * 16
    drift: dict = field(default_factory=default_drift)
    seed: int = 2021
    dropout: float = 0.0

    def __post_init__(self):
        S = self.layout.site_count
        if len(self.site_offsets) != S or len(self.site_sigma) != S:
            raise ValueError("layout/geometry mismatch: need one offset and sigma per site")
        for lot, d in self.drift.items():
            if len(d) != S:
                raise ValueError(f"drift for lot {lot} must have {S} entries")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if any(s < 0 for s in self.site_sigma):
            raise ValueError("site_sigma must be non-negative")

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry.to_dict(),
            "layout": self.layout.to_dict(),
            "trend": list(self.trend),
            "site_offsets": list(self.site_offsets),
            "site_sigma": list(self.site_sigma),
            "drift": {str(k): list(v) for k, v in sorted(self.drift.items())},
            "seed": self.seed,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        base = preset(d.get("preset", "default"))
        kw = {}
        if "geometry" in d:
            kw["geometry"] = geometry_from_dict(d["geometry"])
        if "layout" in d:
            kw["layout"] = TouchdownLayout.from_dict(d["layout"])
        if "trend" in d:
            kw["trend"] = tuple(float(t) for t in d["trend"])
        if "site_offsets" in d:
            kw["site_offsets"] = tuple(float(t) for t in d["site_offsets"])
        if "site_sigma" in d:
            kw["site_sigma"] = tuple(float(t) for t in d["site_sigma"])
        if "drift" in d:
            kw["drift"] = {int(k): tuple(float(t) for t in v) for k, v in d["drift"].items()}
        for key in ("seed",):
            if key in d:
                kw[key] = int(d[key])
        if "dropout" in d:
            kw["dropout"] = float(d["dropout"])
        unknown = set(d) - set(kw) - {"preset"}
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**{**base.__dict__, **kw})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


PRESET_RADII = {"default": 44, "medium": 24, "small": 14}


def preset(name: str = "default") -> SynthConfig:
    """`default` ~6,000 dies / ~580 touchdowns; `medium` ~1,800; `small` ~600."""
    try:
        r = PRESET_RADII[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}") from None
    return SynthConfig(geometry=Disc(0, 0, r))


def trend_values(cfg: SynthConfig, coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    g = cfg.geometry
    if isinstance(g, Disc):
        cx, cy, r = g.cx, g.cy, g.r
    else:
        cx, cy = (g.width - 1) / 2, (g.height - 1) / 2
        r = max(g.width, g.height) / 2
    u = (coords[:, 0] - cx) / r
    v = (coords[:, 1] - cy) / r
    a, b, c, d = cfg.trend
    return a * (u**2 + v**2) + b * u + c * v + d


def generate_wafer(cfg: SynthConfig, lot: int = 1, wafer: int = 1) -> MeasurementSet:
    """Ground-truth measurement of every (non-dropped) die of one wafer."""
    tiling = build_tiling(cfg.geometry, cfg.layout)
    rng = np.random.default_rng([cfg.seed, lot, wafer])
    coords = tiling.dies
    sites = tiling.die_site
    offsets = np.asarray(cfg.site_offsets)
    drift = np.asarray(cfg.drift.get(lot, (0.0,) * cfg.layout.site_count))
    sigma = np.asarray(cfg.site_sigma)
    noise = rng.standard_normal(len(coords)) * sigma[sites]
    values = trend_values(cfg, coords) + offsets[sites] + drift[sites] + noise
    keep = np.ones(len(coords), dtype=bool)
    if cfg.dropout > 0:
        keep = rng.random(len(coords)) >= cfg.dropout
    return MeasurementSet(coords[keep], sites[keep], values[keep], cfg.layout, cfg.geometry,
                          lot=lot, wafer=wafer)


def generate_lot_series(cfg: SynthConfig, lots: int) -> list[MeasurementSet]:
    """First wafer of lots 1..`lots`."""
    if lots < 1:
        raise ValueError("lots must be at least 1")
    return [generate_wafer(cfg, lot, 1) for lot in range(1, lots + 1)]
