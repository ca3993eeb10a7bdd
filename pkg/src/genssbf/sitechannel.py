"""Site-specific multipath channel synthesis.

The site model is azimuth-only. The base station sits at the origin with its
ULA broadside pointing along +y, so a point ``(x, y)`` with ``y > 0`` is seen
at departure angle ``atan2(x, y)``. Every path leaves the array either toward
the UE (line of sight) or toward a fixed scatterer anchor; an anchor
contributes when the straight segment from the UE to the anchor clears every
blocker polygon.

Path gains are ``reflectivity / path_length * fading`` where ``fading`` is a
complex Gaussian of unit mean power with a specular part of relative power
``k / (k + 1)`` (Rician factor ``k``; ``k = 0`` is Rayleigh).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from shapely.geometry import LineString, Point, Polygon
from shapely.prepared import prep

from .numerics import RngStream, mix64, standard_complex_gaussian


class ScenarioId(enum.IntEnum):
    indoor_nlos = 0
    urban_mixed = 1


class SplitTag(enum.IntEnum):
    train = 0
    val = 1
    test = 2


@dataclass(frozen=True)
class ArrayConfig:
    num_antennas: int = 16
    element_spacing: float = 0.5
    carrier_freq_ghz: float = 28.0

    def __post_init__(self):
        if self.num_antennas < 2:
            raise ValueError(f"num_antennas must be >= 2, got {self.num_antennas}")
        if not self.element_spacing > 0:
            raise ValueError(f"element_spacing must be > 0, got {self.element_spacing}")
        if not self.carrier_freq_ghz > 0:
            raise ValueError(f"carrier_freq_ghz must be > 0, got {self.carrier_freq_ghz}")


def steering_vector(array: ArrayConfig, theta: float) -> np.ndarray:
    """ULA response ``exp(j 2 pi d n sin(theta))`` for n = 0..N-1."""
    if not -math.pi / 2 - 1e-12 <= theta <= math.pi / 2 + 1e-12:
        raise ValueError(f"theta={theta} outside [-pi/2, pi/2]")
    n = np.arange(array.num_antennas)
    return np.exp(2j * np.pi * array.element_spacing * n * math.sin(theta))


def steering_matrix(array: ArrayConfig, thetas) -> np.ndarray:
    """Steering vectors for many angles, shape (len(thetas), N)."""
    thetas = np.asarray(thetas, dtype=np.float64)
    n = np.arange(array.num_antennas)
    return np.exp(2j * np.pi * array.element_spacing * np.outer(np.sin(thetas), n))


def departure_angle(point) -> float:
    return math.atan2(float(point[0]), float(point[1]))


@dataclass(frozen=True)
class Anchor:
    position: tuple[float, float]
    reflectivity: float
    phase: float = 0.0  # reflection phase in radians


@dataclass(frozen=True)
class UeGrid:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    spacing: float

    @property
    def xs(self) -> np.ndarray:
        n = int(round((self.x_max - self.x_min) / self.spacing)) + 1
        return self.x_min + self.spacing * np.arange(n)

    @property
    def ys(self) -> np.ndarray:
        n = int(round((self.y_max - self.y_min) / self.spacing)) + 1
        return self.y_min + self.spacing * np.arange(n)

    def positions(self) -> np.ndarray:
        """All grid points in row-major order (y outer, x inner), shape (G, 2)."""
        xx, yy = np.meshgrid(self.xs, self.ys)
        return np.stack([xx.ravel(), yy.ravel()], axis=1)

    def __len__(self) -> int:
        return len(self.xs) * len(self.ys)

    def contains(self, pos, tol: float = 1e-9) -> bool:
        x, y = float(pos[0]), float(pos[1])
        return (self.x_min - tol <= x <= self.x_max + tol
                and self.y_min - tol <= y <= self.y_max + tol)


@dataclass
class SiteScenario:
    scenario_id: ScenarioId
    anchors: list[Anchor]
    ue_grid: UeGrid
    blockers: list[tuple[tuple[float, float], ...]] = field(default_factory=list)
    los_blocked_everywhere: bool = False
    rician_k: float = 10.0
    rng_seed: int = 0

    def __post_init__(self):
        self._polys = [prep(Polygon(p)) for p in self.blockers]

    def _clear(self, ue, b) -> bool:
        # A blocker enclosing the UE itself does not block (outdoor-to-indoor penetration).
        ue = tuple(map(float, ue))
        seg = LineString([ue, tuple(map(float, b))])
        here = Point(ue)
        return not any(p.intersects(seg) and not p.contains(here) for p in self._polys)

    def los_blocked(self, ue_position) -> bool:
        if self.los_blocked_everywhere:
            return True
        return not self._clear(ue_position, (0.0, 0.0))

    def visible_anchors(self, ue_position) -> list[int]:
        return [i for i, a in enumerate(self.anchors) if self._clear(ue_position, a.position)]

    def path_geometry(self, ue_position) -> list[tuple[float, complex]]:
        """Deterministic (angle, specular gain) per path before fading."""
        ue = np.asarray(ue_position, dtype=np.float64)
        out = []
        if not self.los_blocked(ue):
            out.append((departure_angle(ue), complex(1.0 / float(np.hypot(*ue)))))
        for i in self.visible_anchors(ue):
            a = self.anchors[i]
            pos = np.asarray(a.position)
            length = float(np.hypot(*pos) + np.hypot(*(ue - pos)))
            out.append((departure_angle(pos),
                        a.reflectivity * np.exp(1j * a.phase) / length))
        return out

    def mirrored(self) -> "SiteScenario":
        """The same site reflected about the array broadside (x -> -x)."""
        g = self.ue_grid
        return SiteScenario(
            scenario_id=self.scenario_id,
            anchors=[Anchor((-a.position[0], a.position[1]), a.reflectivity, a.phase)
                     for a in self.anchors],
            ue_grid=UeGrid(-g.x_max, -g.x_min, g.y_min, g.y_max, g.spacing),
            blockers=[tuple((-x, y) for x, y in p) for p in self.blockers],
            los_blocked_everywhere=self.los_blocked_everywhere,
            rician_k=self.rician_k,
            rng_seed=self.rng_seed,
        )


@dataclass
class ChannelSample:
    ue_position: np.ndarray  # (2,) meters
    thetas: np.ndarray  # (L,) radians
    gains: np.ndarray  # (L,) complex
    h: np.ndarray  # (N,) complex

    @property
    def num_paths(self) -> int:
        return len(self.thetas)

    def resum(self, array: ArrayConfig) -> np.ndarray:
        return self.gains @ steering_matrix(array, self.thetas)


def synthesize_channel(scenario: SiteScenario, array: ArrayConfig, ue_position,
                       rng: RngStream) -> ChannelSample:
    ue = np.asarray(ue_position, dtype=np.float64)
    if not scenario.ue_grid.contains(ue):
        raise ValueError(f"UE position {tuple(ue)} outside the scenario grid")
    return _synthesize_from_geometry(scenario, array, ue, scenario.path_geometry(ue), rng)


@dataclass
class ChannelDataset:
    array: ArrayConfig
    scenario_id: ScenarioId
    seed: int
    samples: list[ChannelSample]
    split_tags: np.ndarray  # (S,) uint8 of SplitTag values

    def __len__(self) -> int:
        return len(self.samples)

    def channels(self) -> np.ndarray:
        return np.stack([s.h for s in self.samples])

    def indices(self, tag: SplitTag) -> np.ndarray:
        return np.flatnonzero(self.split_tags == int(tag))

    def __iter__(self) -> Iterator[ChannelSample]:
        return iter(self.samples)


def split_tags(num_samples: int, seed: int) -> np.ndarray:
    """80/10/10 train/val/test tags by hashed ranking inside blocks of ten.

    Each full block of ten consecutive indices gets exactly eight train, one
    val and one test tag, so proportions are exact for multiples of ten.
    """
    slots = np.array([0] * 8 + [1, 2], dtype=np.uint8)
    tags = np.empty(num_samples, dtype=np.uint8)
    for start in range(0, num_samples, 10):
        idx = range(start, min(start + 10, num_samples))
        keys = [mix64(mix64(seed, 0x5EED), i) for i in idx]
        order = sorted(range(len(keys)), key=lambda j: keys[j])
        for rank, j in enumerate(order):
            tags[start + j] = slots[rank]
    return tags


def generate_dataset(scenario: SiteScenario, array: ArrayConfig, num_samples: int,
                     seed: int) -> ChannelDataset:
    """Sweep the UE grid row-major; sample i uses its own derived fading stream."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    grid = scenario.ue_grid.positions()
    root = RngStream(seed, mix64(int(scenario.scenario_id), scenario.rng_seed))
    geom_cache: dict[int, list] = {}
    samples = []
    for i in range(num_samples):
        g = i % len(grid)
        if g not in geom_cache:
            geom_cache[g] = scenario.path_geometry(grid[g])
        samples.append(_synthesize_from_geometry(scenario, array, grid[g], geom_cache[g],
                                                 root.child(i)))
    return ChannelDataset(array, scenario.scenario_id, seed, samples,
                          split_tags(num_samples, seed))


def _synthesize_from_geometry(scenario, array, ue, geom, rng) -> ChannelSample:
    if not geom:
        raise ValueError(f"UE position {tuple(ue)} has no propagation path")
    thetas = np.array([t for t, _ in geom])
    k = scenario.rician_k
    fading = (math.sqrt(k / (k + 1.0))
              + math.sqrt(1.0 / (k + 1.0)) * standard_complex_gaussian(rng, len(geom)))
    gains = np.array([g for _, g in geom]) * fading
    return ChannelSample(np.array(ue, dtype=np.float64), thetas, gains,
                         gains @ steering_matrix(array, thetas))


# ---------------------------------------------------------------------------
# Default scenes


def _anchor_at(u: float, **where) -> tuple[float, float]:
    """Point at departure-angle sine ``u`` lying on x = const or y = const."""
    s = u
    c = math.sqrt(1.0 - s * s)
    if "x" in where:
        r = where["x"] / s
    else:
        r = where["y"] / c
    return (r * s, r * c)


def _rect(x0, y0, x1, y1):
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


def _wall(x0, y0, x1, y1, t=0.05):
    """Thin rectangle around the segment (x0, y0)-(x1, y1)."""
    dx, dy = x1 - x0, y1 - y0
    n = math.hypot(dx, dy)
    ox, oy = -dy / n * t, dx / n * t
    return ((x0 + ox, y0 + oy), (x1 + ox, y1 + oy), (x1 - ox, y1 - oy), (x0 - ox, y0 - oy))


def indoor_nlos(seed: int = 0) -> SiteScenario:
    """Two 20 m-wide rooms behind a wall, split by a partition; no line of sight anywhere.

    Every reflector sits exactly on a 16-point DFT grid direction. Each room has
    one reflector at sine 0, one at -1/2 and one at +-1/8; the +-1/8 pair falls in
    the nulls of the 4-beam probe set, so the two rooms produce the same kind of
    4-beam prompt while their best beams differ.
    """
    face = 16.1  # front face of the partition
    anchors = [
        Anchor((0.0, face), 1.0, 0.0),
        Anchor(_anchor_at(-0.125, y=face), 1.0, -0.8),
        Anchor(_anchor_at(-0.5, y=face), 1.0, -2.0),
        Anchor((0.0, 26.5), 1.0, 0.4),
        Anchor(_anchor_at(0.125, y=26.5), 1.0, 2.3),
        Anchor(_anchor_at(-0.5, x=-10.5), 1.0, 1.1),
    ]
    return SiteScenario(
        scenario_id=ScenarioId.indoor_nlos,
        anchors=anchors,
        ue_grid=UeGrid(-10.0, 10.0, 6.0, 26.0, 0.5),
        blockers=[_wall(-10.5, 16.25, 10.5, 16.25)],
        los_blocked_everywhere=True,
        rician_k=10.0,
        rng_seed=seed,
    )


def urban_mixed(seed: int = 0) -> SiteScenario:
    """100 m x 100 m street grid; buildings block line of sight for part of the area."""
    buildings = [
        _rect(-35.0, 35.0, -25.0, 45.0),
        _rect(-5.0, 39.0, 5.0, 47.0),
        _rect(25.0, 31.0, 35.0, 41.0),
        _rect(-25.0, 75.0, -15.0, 85.0),
        _rect(15.0, 75.0, 25.0, 87.0),
    ]
    anchors = [
        Anchor((-42.5, 53.0), 0.6, 0.4), Anchor((-21.5, 29.0), 0.7, -1.1),
        Anchor((-8.5, 50.5), 0.6, 2.0), Anchor((10.5, 33.5), 0.7, -0.3),
        Anchor((23.5, 46.5), 0.6, 1.2), Anchor((44.5, 27.5), 0.7, -2.4),
        Anchor((-30.5, 92.5), 0.5, 0.8), Anchor((-11.5, 69.5), 0.6, -1.7),
        Anchor((13.5, 96.5), 0.5, 2.7), Anchor((34.5, 71.5), 0.6, -0.9),
        Anchor((-50.0, 115.0), 0.5, 1.5), Anchor((50.0, 118.0), 0.5, -2.9),
    ]
    return SiteScenario(
        scenario_id=ScenarioId.urban_mixed,
        anchors=anchors,
        ue_grid=UeGrid(-50.0, 50.0, 20.0, 120.0, 2.0),
        blockers=[tuple(b) for b in buildings],
        los_blocked_everywhere=False,
        rician_k=6.0,
        rng_seed=seed,
    )


def default_scenario(scenario_id, seed: int = 0) -> SiteScenario:
    sid = ScenarioId[scenario_id] if isinstance(scenario_id, str) else ScenarioId(scenario_id)
    return {ScenarioId.indoor_nlos: indoor_nlos,
            ScenarioId.urban_mixed: urban_mixed}[sid](seed)


def path_count_map(scenario: SiteScenario) -> np.ndarray:
    """Number of paths at every grid point (row-major order)."""
    return np.array([len(scenario.path_geometry(p)) for p in scenario.ue_grid.positions()])


__all__: Sequence[str] = [
    "ArrayConfig", "Anchor", "UeGrid", "SiteScenario", "ScenarioId", "SplitTag",
    "ChannelSample", "ChannelDataset", "steering_vector", "steering_matrix",
    "synthesize_channel", "generate_dataset", "split_tags", "default_scenario",
    "indoor_nlos", "urban_mixed", "path_count_map",
]
