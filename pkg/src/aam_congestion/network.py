"""Static network description: vertiports, paths, airspace sectors and the time grid."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path as FsPath
from typing import Iterable, Mapping


class NetworkError(ValueError):
    """Raised when a scenario document describes an inconsistent network."""


@dataclass(frozen=True)
class TimeGrid:
    horizon_periods: int
    period_seconds: int
    llp_frames_per_day: int = 8
    days: int = 1

    def __post_init__(self):
        for name in ("horizon_periods", "period_seconds", "llp_frames_per_day", "days"):
            if int(getattr(self, name)) <= 0:
                raise NetworkError(f"time.{name} must be a positive integer")

    @property
    def horizon_seconds(self) -> int:
        return self.horizon_periods * self.period_seconds

    @property
    def day_seconds(self) -> int:
        return self.horizon_seconds * self.llp_frames_per_day

    def period_of(self, t: float) -> int:
        """Period containing instant ``t``; the last period is open-ended."""
        if t < 0:
            raise ValueError(f"negative time {t}")
        return min(int(math.floor(t / self.period_seconds)), self.horizon_periods - 1)

    def period_ending(self, t: float) -> int:
        """Period containing the instant just before ``t`` (exit convention)."""
        if t <= 0:
            return 0
        return min(int(math.ceil(t / self.period_seconds)) - 1, self.horizon_periods - 1)


@dataclass(frozen=True)
class Vertiport:
    id: str
    dep_capacity: float
    arr_capacity: float
    base_landing_fee: tuple[float, ...]
    busy: bool = False

    @property
    def dep_separation(self) -> float:
        return 3600.0 / self.dep_capacity

    @property
    def arr_separation(self) -> float:
        return 3600.0 / self.arr_capacity


@dataclass(frozen=True)
class Path:
    id: str
    origin: str
    destination: str
    travel_time: float
    base_cost: float
    sector_offsets: tuple[tuple[str, float], ...] = ()

    @property
    def od(self) -> tuple[str, str]:
        return (self.origin, self.destination)

    def segments(self) -> list[tuple[str, float, float]]:
        """(sector, entry offset, exit offset) for each sector along the path."""
        out = []
        for k, (sector, start) in enumerate(self.sector_offsets):
            end = self.sector_offsets[k + 1][1] if k + 1 < len(self.sector_offsets) else self.travel_time
            out.append((sector, start, end))
        return out


@dataclass(frozen=True)
class AirspaceSector:
    id: str
    capacity: float  # flights per period; math.inf for uncapacitated


@dataclass(frozen=True)
class NetworkModel:
    vertiports: Mapping[str, Vertiport]
    paths: Mapping[str, Path]
    sectors: Mapping[str, AirspaceSector]
    time: TimeGrid
    od_pairs: tuple[tuple[str, str], ...] = field(default=())

    @cached_property
    def paths_by_od(self) -> dict[tuple[str, str], tuple[str, ...]]:
        out: dict[tuple[str, str], list[str]] = {}
        for pid in sorted(self.paths):
            out.setdefault(self.paths[pid].od, []).append(pid)
        return {od: tuple(ids) for od, ids in out.items()}

    @cached_property
    def sector_index(self) -> dict[str, frozenset[str]]:
        """Sector id -> ids of paths crossing it (the path side of FP(a))."""
        index: dict[str, set[str]] = {a: set() for a in self.sectors}
        for pid, p in self.paths.items():
            for sector, _ in p.sector_offsets:
                index[sector].add(pid)
        return {a: frozenset(ids) for a, ids in index.items()}

    @cached_property
    def landing_index(self) -> dict[str, frozenset[str]]:
        """Vertiport id -> ids of paths landing there (the path side of F(v))."""
        index: dict[str, set[str]] = {v: set() for v in self.vertiports}
        for pid, p in self.paths.items():
            index[p.destination].add(pid)
        return {v: frozenset(ids) for v, ids in index.items()}

    def all_od_pairs(self) -> tuple[tuple[str, str], ...]:
        return self.od_pairs or tuple(sorted(self.paths_by_od))

    def od_paths(self, origin: str, destination: str) -> tuple[str, ...]:
        try:
            return self.paths_by_od[(origin, destination)]
        except KeyError:
            raise NetworkError(f"no path for OD pair {origin}->{destination}") from None

    def shortest_path(self, origin: str, destination: str) -> Path:
        """Minimum travel-time path for an OD pair, ties broken by lowest id."""
        ids = self.od_paths(origin, destination)
        return min((self.paths[i] for i in ids), key=lambda p: (p.travel_time, p.id))

    def to_document(self) -> dict:
        doc = {
            "time": {
                "horizon_periods": self.time.horizon_periods,
                "period_seconds": self.time.period_seconds,
                "llp_frames_per_day": self.time.llp_frames_per_day,
                "days": self.time.days,
            },
            "vertiports": [
                {
                    "id": v.id,
                    "dep_capacity": v.dep_capacity,
                    "arr_capacity": v.arr_capacity,
                    "base_landing_fee": list(v.base_landing_fee),
                    "busy": v.busy,
                }
                for v in self.vertiports.values()
            ],
            "paths": [
                {
                    "id": p.id,
                    "origin": p.origin,
                    "destination": p.destination,
                    "travel_time": p.travel_time,
                    "base_cost": p.base_cost,
                    "sector_offsets": [[a, off] for a, off in p.sector_offsets],
                }
                for p in self.paths.values()
            ],
            "sectors": [
                {"id": s.id, "capacity": None if math.isinf(s.capacity) else s.capacity}
                for s in self.sectors.values()
            ],
        }
        if self.od_pairs:
            doc["od_pairs"] = [list(od) for od in self.od_pairs]
        return doc


def _positive(value, what: str, eid: str) -> float:
    value = float(value)
    if not value > 0 or math.isinf(value):
        raise NetworkError(f"{what} of {eid!r} must be finite and positive, got {value}")
    return value


def load_network(config: Mapping | str | FsPath) -> NetworkModel:
    """Build a validated :class:`NetworkModel` from a scenario document.

    ``config`` is either the parsed JSON mapping or a path to the JSON file.
    """
    if not isinstance(config, Mapping):
        with open(config) as fh:
            config = json.load(fh)

    t = config["time"]
    time = TimeGrid(
        horizon_periods=int(t["horizon_periods"]),
        period_seconds=int(t["period_seconds"]),
        llp_frames_per_day=int(t.get("llp_frames_per_day", 8)),
        days=int(t.get("days", 1)),
    )

    sectors: dict[str, AirspaceSector] = {}
    for s in config.get("sectors", []):
        cap = s.get("capacity")
        cap = math.inf if cap is None else float(cap)
        if cap < 0:
            raise NetworkError(f"sector {s['id']!r} has negative capacity {cap}")
        sectors[s["id"]] = AirspaceSector(s["id"], cap)

    vertiports: dict[str, Vertiport] = {}
    for v in config["vertiports"]:
        vid = v["id"]
        fees = v.get("base_landing_fee", 0.0)
        if isinstance(fees, (int, float)):
            fees = [float(fees)] * time.horizon_periods
        fees = tuple(float(x) for x in fees)
        if len(fees) != time.horizon_periods:
            raise NetworkError(
                f"vertiport {vid!r} has {len(fees)} landing fees, expected {time.horizon_periods}"
            )
        if any(x < 0 for x in fees):
            raise NetworkError(f"vertiport {vid!r} has a negative landing fee")
        vertiports[vid] = Vertiport(
            vid,
            _positive(v["dep_capacity"], "dep_capacity", vid),
            _positive(v["arr_capacity"], "arr_capacity", vid),
            fees,
            bool(v.get("busy", False)),
        )

    paths: dict[str, Path] = {}
    for p in config["paths"]:
        pid = p["id"]
        for end in ("origin", "destination"):
            if p[end] not in vertiports:
                raise NetworkError(f"path {pid!r} references unknown vertiport {p[end]!r}")
        if p["origin"] == p["destination"]:
            raise NetworkError(f"path {pid!r} has identical origin and destination")
        travel = _positive(p["travel_time"], "travel_time", pid)
        cost = float(p.get("base_cost", 0.0))
        if cost < 0:
            raise NetworkError(f"path {pid!r} has negative base_cost")
        offsets = tuple((str(a), float(off)) for a, off in p.get("sector_offsets", []))
        prev = -math.inf
        for a, off in offsets:
            if a not in sectors:
                raise NetworkError(f"path {pid!r} references undefined sector {a!r}")
            if not (0 <= off < travel and off > prev):
                raise NetworkError(f"path {pid!r} has non-increasing or out-of-range offset at sector {a!r}")
            prev = off
        paths[pid] = Path(pid, p["origin"], p["destination"], travel, cost, offsets)

    od_pairs = tuple(tuple(od) for od in config.get("od_pairs", ()))
    net = NetworkModel(vertiports, paths, sectors, time, od_pairs)
    for o, d in od_pairs:
        if (o, d) not in net.paths_by_od:
            raise NetworkError(f"OD pair {o}->{d} has zero paths")
    return net


def flights_through_sector(net: NetworkModel, sector: str) -> frozenset[str]:
    """Ids of the paths whose sector list mentions ``sector``."""
    if sector not in net.sectors:
        raise NetworkError(f"unknown sector {sector!r}")
    return net.sector_index[sector]


def save_network(net: NetworkModel, path: str | FsPath) -> None:
    with open(path, "w") as fh:
        json.dump(net.to_document(), fh, indent=1)


# --- synthetic geometry -------------------------------------------------------


def _polar_sector(x: float, y: float, core_radius: float, n_core: int, n_ring: int) -> str:
    r = math.hypot(x, y)
    ang = math.atan2(y, x) % (2 * math.pi)
    if r < core_radius:
        return f"C{int(ang / (2 * math.pi / n_core)) % n_core}"
    return f"R{int(ang / (2 * math.pi / n_ring)) % n_ring}"


def _walk(points: list[tuple[float, float]], speed: float, step: float, classify) -> tuple[float, list]:
    """Sample a polyline and return (travel time, [(sector, entry offset), ...])."""
    offsets: list[tuple[str, float]] = []
    dist = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        seg = math.hypot(x1 - x0, y1 - y0)
        n = max(1, int(seg / step))
        for i in range(n):
            frac = i / n
            sector = classify(x0 + frac * (x1 - x0), y0 + frac * (y1 - y0))
            if not offsets or offsets[-1][0] != sector:
                offsets.append((sector, round((dist + frac * seg) / speed, 1)))
        dist += seg
    travel = round(dist / speed, 1)
    return travel, offsets


def build_synthetic_network(
    n_vertiports: int = 7,
    busy: Iterable[int] = (0, 2, 5),
    radius_m: float = 24000.0,
    core_radius_m: float = 16000.0,
    speed_mps: float = 60.0,
    n_core: int = 4,
    n_ring: int = 7,
    core_capacity: float = 1,
    ring_capacity: float = 3,
    waypoint_radius: float = 1.2,
    cost_per_km: float = 1.5,
    fixed_cost: float = 10.0,
    dep_capacity: float = 20.0,
    arr_capacity: float = 20.0,
    horizon_periods: int = 12,
    period_seconds: int = 900,
    frames_per_day: int = 8,
    landing_fee: float = 25.0,
    peak_fee: float = 35.0,
) -> NetworkModel:
    """Ring of vertiports around a low-capacity core, three paths per OD pair.

    Path 0 is the straight chord. Paths 1 and 2 fly through a waypoint outside
    the vertiport ring, halfway round in the clockwise and counter-clockwise
    directions, which keeps them out of the core at a higher cost.
    """
    busy = set(busy)
    coords = {}
    for k in range(n_vertiports):
        ang = 2 * math.pi * k / n_vertiports + math.pi / (2 * n_vertiports)
        coords[f"V{k}"] = (radius_m * math.cos(ang), radius_m * math.sin(ang))

    def classify(x, y):
        return _polar_sector(x, y, core_radius_m, n_core, n_ring)

    fees = tuple(
        peak_fee if horizon_periods // 3 <= tau < 2 * horizon_periods // 3 else landing_fee
        for tau in range(horizon_periods)
    )
    doc = {
        "time": {
            "horizon_periods": horizon_periods,
            "period_seconds": period_seconds,
            "llp_frames_per_day": frames_per_day,
            "days": 1,
        },
        "vertiports": [
            {
                "id": vid,
                "dep_capacity": dep_capacity,
                "arr_capacity": arr_capacity,
                "base_landing_fee": list(fees),
                "busy": int(vid[1:]) in busy,
            }
            for vid in coords
        ],
        "sectors": [{"id": f"C{i}", "capacity": core_capacity} for i in range(n_core)]
        + [{"id": f"R{i}", "capacity": ring_capacity} for i in range(n_ring)],
        "paths": [],
    }
    for o, (xo, yo) in coords.items():
        for d, (xd, yd) in coords.items():
            if o == d:
                continue
            a0, a1 = math.atan2(yo, xo), math.atan2(yd, xd)
            ccw = (a1 - a0) % (2 * math.pi)
            variants = [[(xo, yo), (xd, yd)]]
            for mid in (a0 + ccw / 2, a0 - (2 * math.pi - ccw) / 2):
                wr = waypoint_radius * radius_m
                variants.append([(xo, yo), (wr * math.cos(mid), wr * math.sin(mid)), (xd, yd)])
            for k, pts in enumerate(variants):
                travel, offsets = _walk(pts, speed_mps, 200.0, classify)
                dist_km = travel * speed_mps / 1000.0
                doc["paths"].append(
                    {
                        "id": f"{o}-{d}-{k}",
                        "origin": o,
                        "destination": d,
                        "travel_time": travel,
                        "base_cost": round(fixed_cost + cost_per_km * dist_km, 2),
                        "sector_offsets": offsets,
                    }
                )
    return load_network(doc)
