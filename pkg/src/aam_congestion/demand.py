"""Time-varying stochastic OD demand, schedule sampling and pop-up injection."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path as FsPath
from typing import Iterable, Mapping

import numpy as np

from .network import NetworkModel

PROFILES = ("morning-peak", "afternoon-peak", "evening-peak")
RATE_FLOOR = 1e-6  # flights/hour, keeps the exponential scale finite


@dataclass(frozen=True)
class ProfileBlock:
    """Sinusoid parameters for one OD class; amplitude/baseline are per frame."""

    amplitude: tuple[float, ...]
    baseline: tuple[float, ...]
    phase: float
    peak_window: tuple[float, float] = (0.0, 86400.0)  # seconds of day


@dataclass(frozen=True)
class DemandParams:
    frequency: float  # rad/s, shared by all OD pairs
    noise_sigma: float  # flights/hour
    frame_seconds: int
    frames: int
    profiles: Mapping[str, ProfileBlock]
    od_profile: Mapping[tuple[str, str], str]
    od_scale: Mapping[tuple[str, str], tuple[float, float]]  # (amplitude, baseline) multipliers
    delay_cost: tuple[float, float] = (0.4, 0.6)  # uniform range, currency/second
    psus: tuple[str, ...] = ("PSU-A", "PSU-B")
    name: str = ""
    peak_jitter: float = 0.0  # seconds; std of a per-day shift of every demand curve

    @property
    def od_pairs(self) -> tuple[tuple[str, str], ...]:
        return tuple(sorted(self.od_profile))

    def frame_of(self, t: float) -> int:
        return min(max(int(t // self.frame_seconds), 0), self.frames - 1)


@dataclass(frozen=True)
class FlightRequest:
    id: str
    origin: str
    destination: str
    scheduled_dep: float  # seconds from frame start
    delay_cost: float = 0.5
    psu_tag: str = "PSU-A"
    priority: bool = False

    @property
    def od(self) -> tuple[str, str]:
        return (self.origin, self.destination)


@dataclass
class DaySchedule:
    frames: list[list[FlightRequest]]
    frame_seconds: int
    od_pairs: tuple[tuple[str, str], ...] = ()
    seed: int | None = None
    shift: float = 0.0

    @property
    def demand_histogram(self) -> list[int]:
        return [len(f) for f in self.frames]


def mean_demand(params: DemandParams, od: tuple[str, str], t: float, shift: float = 0.0) -> float:
    """Clamped sinusoidal mean demand (flights/hour) for ``od`` at second ``t`` of the day.

    ``shift`` delays the whole curve by that many seconds.
    """
    try:
        block = params.profiles[params.od_profile[od]]
    except KeyError:
        raise KeyError(f"unknown OD pair {od[0]}->{od[1]}") from None
    amp_scale, base_scale = params.od_scale.get(od, (1.0, 1.0))
    m = params.frame_of(t)
    value = amp_scale * block.amplitude[m] * math.sin(params.frequency * (t - shift) + block.phase) + base_scale * block.baseline[m]
    return max(0.0, value)


def _od_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def sample_schedule(params: DemandParams, net: NetworkModel, day_seed: int) -> DaySchedule:
    """Sample one day of flight requests, frame by frame.

    Each OD pair runs its own exponential clock. The rate is re-read from the
    demand curve at every arrival, and a Gaussian perturbation drawn once per
    (OD, frame) shifts the whole frame up or down. When the parameters carry
    a peak jitter, one shift per day moves every curve earlier or later.
    """
    ods = [od for od in params.od_pairs if od in net.paths_by_od]
    rngs = _od_rngs(day_seed, len(ods) + 1)
    day_rng = rngs.pop()
    shift = day_rng.normal(0.0, params.peak_jitter) if params.peak_jitter > 0 else 0.0
    H = params.frame_seconds
    frames: list[list[tuple]] = [[] for _ in range(params.frames)]
    for od, rng in zip(ods, rngs):
        for m in range(params.frames):
            noise = rng.normal(0.0, params.noise_sigma) if params.noise_sigma > 0 else 0.0
            t = 0.0
            while True:
                rate = max(mean_demand(params, od, m * H + t, shift) + noise, RATE_FLOOR)
                t += rng.exponential(3600.0 / rate)
                if t >= H:
                    break
                cost = rng.uniform(*params.delay_cost)
                psu = params.psus[int(rng.integers(len(params.psus)))]
                frames[m].append((t, od, cost, psu))
    out = []
    for m, items in enumerate(frames):
        items.sort(key=lambda it: (it[0], it[1]))
        out.append(
            [
                FlightRequest(f"F{m}-{k:03d}", od[0], od[1], round(t, 3), round(cost, 4), psu)
                for k, (t, od, cost, psu) in enumerate(items)
            ]
        )
    return DaySchedule(out, H, tuple(ods), day_seed, shift)


def sample_popups(base: DaySchedule, rate: float, frame: int, seed: int,
                  od_pairs: Iterable[tuple[str, str]] | None = None) -> list[FlightRequest]:
    """One priority flight per OD pair with probability ``rate``, departing uniformly in the frame."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"pop-up rate must lie in [0, 1], got {rate}")
    ods = list(od_pairs if od_pairs is not None else base.od_pairs)
    rng = np.random.default_rng(np.random.SeedSequence([seed, frame]))
    draws = rng.random(len(ods))
    times = rng.uniform(0.0, base.frame_seconds, size=len(ods))
    out = []
    for (o, d), u, t in zip(ods, draws, times):
        if u < rate:
            out.append(FlightRequest(f"P{frame}-{len(out):03d}", o, d, round(float(t), 3), 0.0, "PRIORITY", True))
    return sorted(out, key=lambda f: (f.scheduled_dep, f.id))


def normalize_demand(hist) -> np.ndarray:
    """Per-frame counts -> probability vector over frames."""
    h = np.asarray(hist, dtype=float)
    if np.any(h < 0):
        raise ValueError("demand histogram has negative entries")
    total = h.sum()
    if total <= 0:
        raise ValueError("cannot normalize an all-zero demand histogram")
    return h / total


# --- presets -----------------------------------------------------------------


def default_profile(od: tuple[str, str], busy: Mapping[str, bool]) -> str:
    o, d = od
    if busy[d] and not busy[o]:
        return "morning-peak"
    if busy[o] and not busy[d]:
        return "evening-peak"
    return "afternoon-peak"


def demand_from_document(doc: Mapping, net: NetworkModel) -> DemandParams:
    frames = net.time.llp_frames_per_day
    H = net.time.horizon_seconds
    day = frames * H
    freq = float(doc.get("frequency", 2 * math.pi / day))
    profiles = {}
    for label, blk in doc["profiles"].items():
        amp = blk["amplitude"]
        base = blk["baseline"]
        amp = [float(amp)] * frames if isinstance(amp, (int, float)) else [float(a) for a in amp]
        base = [float(base)] * frames if isinstance(base, (int, float)) else [float(a) for a in base]
        if len(amp) != frames or len(base) != frames:
            raise ValueError(f"profile {label!r} needs {frames} per-frame values")
        peak = float(blk["peak_time"])
        window = tuple(blk.get("peak_window", (peak - 3600.0, peak + 3600.0)))
        profiles[label] = ProfileBlock(tuple(amp), tuple(base), math.pi / 2 - freq * peak, window)
    busy = {v.id: v.busy for v in net.vertiports.values()}
    mult = doc.get("multipliers", {})
    busy_m = mult.get("busy", {"amplitude": 1.0, "baseline": 1.0})
    calm_m = mult.get("non_busy", {"amplitude": 1.0, "baseline": 1.0})
    overrides = {tuple(k.split("->")): v for k, v in doc.get("od_profiles", {}).items()}
    od_profile, od_scale = {}, {}
    for od in net.all_od_pairs():
        od_profile[od] = overrides.get(od, default_profile(od, busy))
        # endpoint multipliers compound
        sa = sb = 1.0
        for v in od:
            blk = busy_m if busy[v] else calm_m
            sa *= float(blk["amplitude"])
            sb *= float(blk["baseline"])
        od_scale[od] = (sa, sb)
    return DemandParams(
        frequency=freq,
        noise_sigma=float(doc.get("noise_sigma", 0.0)),
        frame_seconds=H,
        frames=frames,
        profiles=profiles,
        od_profile=od_profile,
        od_scale=od_scale,
        delay_cost=tuple(doc.get("delay_cost", (0.4, 0.6))),
        psus=tuple(doc.get("psus", ("PSU-A", "PSU-B"))),
        name=str(doc.get("name", "")),
        peak_jitter=float(doc.get("peak_jitter", 0.0)),
    )


def load_demand_preset(source: str | FsPath | Mapping, net: NetworkModel) -> DemandParams:
    """Load a preset by bundled name (``"set1"``), file path, or parsed mapping."""
    if isinstance(source, Mapping):
        return demand_from_document(source, net)
    src = str(source)
    if not src.endswith(".json") and "/" not in src:
        text = resources.files("aam_congestion.data").joinpath(f"demand_{src}.json").read_text()
        return demand_from_document(json.loads(text), net)
    with open(src) as fh:
        return demand_from_document(json.load(fh), net)


def expected_od_demand(params: DemandParams, samples_per_frame: int = 12) -> dict[tuple[str, str], float]:
    """Expected flights per day per OD pair (noise-free mean curve, midpoint rule)."""
    H = params.frame_seconds
    dt = H / samples_per_frame
    out = {}
    for od in params.od_pairs:
        total = 0.0
        for m in range(params.frames):
            for k in range(samples_per_frame):
                total += mean_demand(params, od, m * H + (k + 0.5) * dt) * dt / 3600.0
        out[od] = total
    return out


def schedule_to_csv(schedule: DaySchedule, path: str | FsPath) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "flight_id", "origin", "destination", "scheduled_dep", "priority", "delay_cost", "psu"])
        for m, flights in enumerate(schedule.frames):
            for f in flights:
                w.writerow([m, f.id, f.origin, f.destination, f"{f.scheduled_dep:.3f}", int(f.priority),
                            f"{f.delay_cost:.4f}", f.psu_tag])
