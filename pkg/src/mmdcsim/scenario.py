"""Urban-grid geometry: buildings, cell sites, the UE trajectory, and the
geometric LOS/NLOS state of every UE-eNB link.

The default layout is a 200 x 115 m block with four randomly placed
non-overlapping buildings, two roadside mmWave cells, one mmWave cell at the
top, and the LTE macro co-located with the top cell.  The corner layout is a
fixed T-junction where the UE turns into a street canyon, losing LOS to both
roadside cells while gaining LOS to the top one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .engine import ConfigError, SimConfig

LTE_ID = 1
PLACEMENT_ATTEMPT_BUDGET = 10_000


class GenerationError(RuntimeError):
    """Random placement could not satisfy the constraints."""


class QueryError(ValueError):
    """Query outside the valid domain (e.g. time beyond the trajectory)."""


@dataclass(frozen=True)
class Building:
    """Axis-aligned building footprint with a height."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    height: float

    def overlaps(self, other: "Building") -> bool:
        return not (self.x_max <= other.x_min or other.x_max <= self.x_min
                    or self.y_max <= other.y_min or other.y_max <= self.y_min)

    def contains_xy(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


@dataclass(frozen=True)
class Site:
    site_id: int
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class SitePlan:
    """mmWave sites plus the LTE macro (co-located with one mmWave cell)."""

    mmwave_sites: tuple[Site, ...]
    lte_site: Site
    colocated_with: int | None = None

    def mmwave_ids(self) -> tuple[int, ...]:
        return tuple(s.site_id for s in self.mmwave_sites)

    def site(self, site_id: int) -> Site:
        if site_id == self.lte_site.site_id:
            return self.lte_site
        for s in self.mmwave_sites:
            if s.site_id == site_id:
                return s
        raise QueryError(f"unknown site id {site_id}")


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear UE path traversed at constant speed."""

    waypoints: tuple[tuple[float, float], ...]
    speed_mps: float

    def __post_init__(self) -> None:
        if len(self.waypoints) < 2:
            raise ConfigError("trajectory needs at least two waypoints")
        if self.speed_mps <= 0:
            raise ConfigError("trajectory speed must be positive")

    @property
    def length_m(self) -> float:
        pts = np.asarray(self.waypoints)
        return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))

    @property
    def duration_s(self) -> float:
        return self.length_m / self.speed_mps

    def position(self, t: float) -> tuple[float, float]:
        if t < 0 or t > self.duration_s + 1e-12:
            raise QueryError(
                f"t={t} outside trajectory duration [0, {self.duration_s}]")
        x, y = self.positions(np.asarray([t]))
        return float(x[0]), float(y[0])

    def positions(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized position lookup; t is clipped to the path end."""
        pts = np.asarray(self.waypoints, dtype=float)
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        cum = np.concatenate(([0.0], np.cumsum(seg_len)))
        dist = np.clip(np.asarray(t, dtype=float) * self.speed_mps, 0.0, cum[-1])
        x = np.interp(dist, cum, pts[:, 0])
        y = np.interp(dist, cum, pts[:, 1])
        return x, y


@dataclass(frozen=True)
class ScenarioGeometry:
    buildings: tuple[Building, ...]
    sites: SitePlan
    trajectory: Trajectory
    bounds: tuple[float, float, float, float]
    ue_height_m: float = 1.5


def generate_buildings(stream: np.random.Generator, count: int,
                       bounds: tuple[float, float, float, float],
                       side_range: tuple[float, float],
                       height_range: tuple[float, float],
                       exclude_points: Sequence[tuple[float, float]] = (),
                       attempt_budget: int = PLACEMENT_ATTEMPT_BUDGET,
                       ) -> list[Building]:
    """Rejection-sample `count` non-overlapping buildings inside bounds.

    Placements covering any of `exclude_points` (cell sites) are rejected
    too, so a site is never buried inside a block.
    """
    if count < 0:
        raise ConfigError("building count must be >= 0")
    if side_range[0] <= 0 or height_range[0] <= 0:
        raise ConfigError("building size and height ranges must be positive")
    x_min, y_min, x_max, y_max = bounds
    placed: list[Building] = []
    attempts = 0
    while len(placed) < count:
        if attempts >= attempt_budget:
            raise GenerationError(
                f"placed {len(placed)}/{count} buildings after "
                f"{attempt_budget} attempts; bounds too small")
        attempts += 1
        w = stream.uniform(*side_range)
        d = stream.uniform(*side_range)
        h = stream.uniform(*height_range)
        if x_max - x_min < w or y_max - y_min < d:
            continue
        x0 = stream.uniform(x_min, x_max - w)
        y0 = stream.uniform(y_min, y_max - d)
        candidate = Building(x0, y0, x0 + w, y0 + d, h)
        if any(candidate.overlaps(b) for b in placed):
            continue
        if any(candidate.contains_xy(px, py) for px, py in exclude_points):
            continue
        placed.append(candidate)
    return placed


def ue_position(traj: Trajectory, t: float) -> tuple[float, float]:
    """UE position at time t along the constant-speed trajectory."""
    return traj.position(t)


def _segment_blocked(p0: np.ndarray, p1: np.ndarray, b: Building) -> bool:
    """True when the 3-D segment p0->p1 passes through the building volume."""
    d = p1 - p0
    t_lo, t_hi = 0.0, 1.0
    for axis, (lo, hi) in enumerate(((b.x_min, b.x_max), (b.y_min, b.y_max))):
        if abs(d[axis]) < 1e-12:
            if not (lo <= p0[axis] <= hi):
                return False
        else:
            t0 = (lo - p0[axis]) / d[axis]
            t1 = (hi - p0[axis]) / d[axis]
            if t0 > t1:
                t0, t1 = t1, t0
            t_lo = max(t_lo, t0)
            t_hi = min(t_hi, t1)
            if t_lo > t_hi:
                return False
    z_a = p0[2] + t_lo * d[2]
    z_b = p0[2] + t_hi * d[2]
    return min(z_a, z_b) < b.height


def link_state(ue: tuple[float, float, float] | tuple[float, float],
               site: tuple[float, float, float] | tuple[float, float],
               buildings: Iterable[Building],
               ue_height: float = 1.5, site_height: float = 10.0) -> str:
    """Geometric link state: 'nlos' iff some building blocks the segment."""
    ue3 = np.asarray(ue if len(ue) == 3 else (*ue, ue_height), dtype=float)
    site3 = np.asarray(site if len(site) == 3 else (*site, site_height), dtype=float)
    for b in buildings:
        if _segment_blocked(ue3, site3, b):
            return "nlos"
    return "los"


def los_mask(geometry: ScenarioGeometry, site: Site,
             ue_x: np.ndarray, ue_y: np.ndarray) -> np.ndarray:
    """Vectorized LOS test for one site against many UE positions.

    Returns a boolean array, True where the link is LOS.
    """
    p0x, p0y, p0z = ue_x, ue_y, np.full_like(ue_x, geometry.ue_height_m)
    dx, dy, dz = site.x - p0x, site.y - p0y, site.z - p0z
    blocked = np.zeros(ue_x.shape, dtype=bool)
    for b in geometry.buildings:
        t_lo = np.zeros_like(ue_x)
        t_hi = np.ones_like(ue_x)
        ok = np.ones(ue_x.shape, dtype=bool)
        for p, d, lo, hi in ((p0x, dx, b.x_min, b.x_max), (p0y, dy, b.y_min, b.y_max)):
            parallel = np.abs(d) < 1e-12
            inside = (p >= lo) & (p <= hi)
            ok &= ~parallel | inside
            with np.errstate(divide="ignore", invalid="ignore"):
                t0 = np.where(parallel, 0.0, (lo - p) / d)
                t1 = np.where(parallel, 1.0, (hi - p) / d)
            swap = t0 > t1
            t0s = np.where(swap, t1, t0)
            t1s = np.where(swap, t0, t1)
            t_lo = np.where(parallel, t_lo, np.maximum(t_lo, t0s))
            t_hi = np.where(parallel, t_hi, np.minimum(t_hi, t1s))
        ok &= t_lo <= t_hi
        z_a = p0z + t_lo * dz
        z_b = p0z + t_hi * dz
        blocked |= ok & (np.minimum(z_a, z_b) < b.height)
    return ~blocked


def default_scenario(config: SimConfig, stream: np.random.Generator) -> ScenarioGeometry:
    """Random urban-grid layout used by the main campaign."""
    sites = SitePlan(
        mmwave_sites=(
            Site(2, 0.0, 50.0, config.enb_height_m),
            Site(3, 200.0, 50.0, config.enb_height_m),
            Site(4, 100.0, 110.0, config.enb_height_m),
        ),
        lte_site=Site(LTE_ID, 100.0, 110.0, config.enb_height_m),
        colocated_with=4,
    )
    bounds = (0.0, 0.0, 200.0, 115.0)
    buildings = generate_buildings(
        stream, config.n_buildings, bounds,
        (config.building_side_min_m, config.building_side_max_m),
        (config.building_height_min_m, config.building_height_max_m),
        exclude_points=[(s.x, s.y) for s in sites.mmwave_sites],
    )
    traj = Trajectory(((50.0, -5.0), (150.0, -5.0)), config.ue_speed_mps)
    return ScenarioGeometry(tuple(buildings), sites, traj, bounds,
                            config.ue_height_m)


def corner_scenario(config: SimConfig) -> ScenarioGeometry:
    """Fixed T-junction layout.

    The UE travels the bottom street, then turns 90 degrees into a canyon.
    Past the turn the two roadside cells fall behind the flanking blocks
    (NLOS) while the cell at the top of the canyon comes into LOS.
    """
    sites = SitePlan(
        mmwave_sites=(
            Site(2, 0.0, 0.0, config.enb_height_m),
            Site(3, 430.0, 0.0, config.enb_height_m),
            Site(4, 175.0, 110.0, config.enb_height_m),
        ),
        lte_site=Site(LTE_ID, 175.0, 110.0, config.enb_height_m),
        colocated_with=4,
    )
    buildings = (
        Building(55.0, 3.0, 128.0, 60.0, 25.0),
        Building(135.0, 3.0, 200.0, 50.0, 25.0),
        Building(230.0, 3.0, 305.0, 60.0, 25.0),
        Building(313.0, 3.0, 390.0, 60.0, 25.0),
    )
    traj = Trajectory(((165.0, -5.0), (215.0, -5.0), (215.0, 45.0)),
                      config.ue_speed_mps)
    bounds = (0.0, -10.0, 430.0, 115.0)
    return ScenarioGeometry(buildings, sites, traj, bounds, config.ue_height_m)


def build_scenario(config: SimConfig, stream: np.random.Generator) -> ScenarioGeometry:
    if config.scenario == "corner":
        return corner_scenario(config)
    return default_scenario(config, stream)


# -- plain-text geometry file --------------------------------------------

def dump_geometry(geometry: ScenarioGeometry) -> str:
    """Serialize a layout to the line-oriented geometry format."""
    lines = ["geometry v1"]
    b = geometry.bounds
    lines.append(f"bounds {b[0]!r} {b[1]!r} {b[2]!r} {b[3]!r}")
    lines.append(f"ue-height {geometry.ue_height_m!r}")
    for bl in geometry.buildings:
        lines.append(
            f"building {bl.x_min!r} {bl.y_min!r} {bl.x_max!r} {bl.y_max!r} {bl.height!r}")
    for s in geometry.sites.mmwave_sites:
        lines.append(f"site mmwave {s.site_id} {s.x!r} {s.y!r} {s.z!r}")
    s = geometry.sites.lte_site
    lines.append(f"site lte {s.site_id} {s.x!r} {s.y!r} {s.z!r}")
    if geometry.sites.colocated_with is not None:
        lines.append(f"colocated {geometry.sites.colocated_with}")
    wp = " ".join(f"{x!r} {y!r}" for x, y in geometry.trajectory.waypoints)
    lines.append(f"trajectory {geometry.trajectory.speed_mps!r} {wp}")
    return "\n".join(lines) + "\n"


def parse_geometry(text: str) -> ScenarioGeometry:
    buildings: list[Building] = []
    mmwave: list[Site] = []
    lte: Site | None = None
    colocated: int | None = None
    traj: Trajectory | None = None
    bounds: tuple[float, float, float, float] | None = None
    ue_height = 1.5
    lines = text.splitlines()
    if not lines or lines[0].strip() != "geometry v1":
        raise ConfigError("geometry file must start with 'geometry v1'")
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "bounds":
                bounds = tuple(float(v) for v in parts[1:5])  # type: ignore[assignment]
            elif parts[0] == "ue-height":
                ue_height = float(parts[1])
            elif parts[0] == "building":
                buildings.append(Building(*(float(v) for v in parts[1:6])))
            elif parts[0] == "site":
                site = Site(int(parts[2]), float(parts[3]), float(parts[4]),
                            float(parts[5]))
                if parts[1] == "mmwave":
                    mmwave.append(site)
                elif parts[1] == "lte":
                    lte = site
                else:
                    raise ValueError(f"unknown site kind {parts[1]!r}")
            elif parts[0] == "colocated":
                colocated = int(parts[1])
            elif parts[0] == "trajectory":
                speed = float(parts[1])
                coords = [float(v) for v in parts[2:]]
                if len(coords) < 4 or len(coords) % 2:
                    raise ValueError("trajectory needs >= 2 (x, y) pairs")
                wps = tuple(zip(coords[0::2], coords[1::2]))
                traj = Trajectory(wps, speed)
            else:
                raise ValueError(f"unknown record {parts[0]!r}")
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"geometry file line {lineno}: {exc}") from exc
    if lte is None or traj is None or bounds is None or not mmwave:
        raise ConfigError("geometry file missing bounds, sites, or trajectory")
    plan = SitePlan(tuple(mmwave), lte, colocated)
    return ScenarioGeometry(tuple(buildings), plan, traj, bounds, ue_height)
