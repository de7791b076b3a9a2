"""Scripted human interventions and end-to-end seeded scenario runs."""

from __future__ import annotations

import bisect
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import ClassVar, Mapping, Sequence

import numpy as np

from .curriculum import choose_actions
from .perception import DEFAULT_SPEC, ObservationSpec
from .rng import stream
from .terrain import LandCover, TerrainGrid, VegetationPlacement, set_land_cover, set_sea_level
from .world import (
    AnimalState,
    Event,
    PlantParams,
    SpeciesParams,
    World,
    WorldConfig,
    default_plants,
    default_species,
    step_world,
)


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant value indexed by step; ``default`` before the first point."""

    points: tuple[tuple[int, float], ...] = ()
    default: float = 0.0

    def __post_init__(self):
        pts = tuple(sorted((int(s), float(v)) for s, v in self.points))
        steps = [s for s, _ in pts]
        if len(set(steps)) != len(steps):
            raise ValueError("schedule has duplicate at_step entries")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "_steps", steps)

    def __call__(self, t: int) -> float:
        k = bisect.bisect_right(self._steps, t)
        return self.default if k == 0 else self.points[k - 1][1]

    def values(self) -> list[float]:
        return [self.default] + [v for _, v in self.points]

    @classmethod
    def constant(cls, value: float) -> "Schedule":
        return cls((), value)

    @classmethod
    def steps_evenly(cls, values: Sequence[float], total_steps: int, start: int = 0) -> "Schedule":
        """``values`` switched on at evenly spaced steps across the run."""
        gap = (total_steps - start) / len(values)
        return cls(tuple((start + int(round(i * gap)), v) for i, v in enumerate(values)))

    @classmethod
    def from_json(cls, spec) -> "Schedule":
        if isinstance(spec, (int, float)):
            return cls.constant(float(spec))
        return cls(tuple((int(p["at_step"]), float(p["value"])) for p in spec))


def _check_probability(s: Schedule, what: str) -> None:
    for v in s.values():
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{what} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class RoadKill:
    corridor: object  # Rect | Polyline
    kill_probability: Schedule
    at_step: int = 0
    kind: ClassVar[str] = "road_kill"

    def __post_init__(self):
        _check_probability(self.kill_probability, "kill probability")


@dataclass(frozen=True)
class Hunting:
    species: str
    cull_probability: Schedule
    interval: int = 1000
    kind: ClassVar[str] = "hunting"

    def __post_init__(self):
        _check_probability(self.cull_probability, "cull probability")
        if self.interval < 1:
            raise ValueError("hunting interval must be >= 1")


@dataclass(frozen=True)
class SeaLevel:
    levels: Schedule
    kind: ClassVar[str] = "sea_level"


@dataclass(frozen=True)
class LandCoverChange:
    region: object
    cover: LandCover
    at_step: int = 0
    kind: ClassVar[str] = "land_cover_change"


@dataclass(frozen=True)
class FertilityMultiplier:
    species: str
    factor: Schedule
    kind: ClassVar[str] = "fertility_multiplier"

    def __post_init__(self):
        if any(v < 0 for v in self.factor.values()):
            raise ValueError("fertility factor must be >= 0")


@dataclass(frozen=True)
class IntroduceAnimals:
    species: str
    count: int
    location: object = "shoreline"  # "shoreline" or an (x, y) point
    at_step: int = 0
    kind: ClassVar[str] = "introduce_animals"


@dataclass(frozen=True)
class PolluteWater:
    region: object
    at_step: int = 0
    kind: ClassVar[str] = "pollute_water"


@dataclass
class ScenarioSchedule:
    interventions: list = field(default_factory=list)
    total_steps: int = 1000
    record_interval: int = 100

    def __post_init__(self):
        if self.total_steps < 1 or self.record_interval < 1:
            raise ValueError("total_steps and record_interval must be >= 1")

    @property
    def n_samples(self) -> int:
        return math.ceil(self.total_steps / self.record_interval)

    def marker_steps(self) -> list[int]:
        """Steps at which some intervention changes, for chart markers."""
        marks = set()
        for iv in self.interventions:
            for attr in ("kill_probability", "cull_probability", "levels", "factor"):
                sched = getattr(iv, attr, None)
                if sched is not None:
                    marks.update(s for s, _ in sched.points)
            if hasattr(iv, "at_step") and not isinstance(iv, IntroduceAnimals):
                marks.add(iv.at_step)
        return sorted(m for m in marks if 0 < m < self.total_steps)


@dataclass
class ScenarioParams:
    species: dict = field(default_factory=default_species)
    plants: dict = field(default_factory=default_plants)
    world_config: WorldConfig = field(default_factory=WorldConfig)
    density_table: Mapping | None = None
    initial: list = field(default_factory=list)  # IntroduceAnimals applied before the first step
    observation: ObservationSpec = DEFAULT_SPEC


@dataclass
class PopulationTimeSeries:
    steps: list[int] = field(default_factory=list)
    counts: dict[str, list[int]] = field(default_factory=dict)
    death_causes: dict[str, Counter] = field(default_factory=dict)
    intervention_counts: Counter = field(default_factory=Counter)
    markers: list[int] = field(default_factory=list)
    end_step: int = 0  # steps actually simulated

    def record(self, t: int, world: World) -> None:
        self.steps.append(t)
        for sp in self.counts:
            self.counts[sp].append(world.count(sp))

    def final(self, species: str) -> int:
        return self.counts[species][-1]


# ---------------------------------------------------------------------------
# intervention mechanics


def shoreline_cells(world: World) -> np.ndarray:
    """(x, y) cells on dry land touching water or the map edge."""
    water = np.pad(world.grid.water, 1, constant_values=True)
    h, w = world.grid.shape
    near = np.zeros((h, w), dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            near |= water[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    shore = near & world.grid.walkable
    ys, xs = np.nonzero(shore)
    return np.stack([xs, ys], axis=1)


def introduce(world: World, iv: IntroduceAnimals, rng: np.random.Generator) -> list[Event]:
    shore = shoreline_cells(world)
    free = np.array([world.is_free((int(x), int(y))) for x, y in shore], dtype=bool) if len(shore) else np.zeros(0, bool)
    cand = shore[free] if len(shore) else shore
    if len(cand) < iv.count:
        raise ValueError("introduction location fully submerged: not enough free shoreline cells")
    if isinstance(iv.location, str):
        if iv.location != "shoreline":
            raise ValueError(f"unknown introduction location {iv.location!r}")
        anchor = cand[int(rng.integers(len(cand)))] + 0.5
    else:
        anchor = np.asarray(iv.location, dtype=float)
    d = np.hypot(cand[:, 0] + 0.5 - anchor[0], cand[:, 1] + 0.5 - anchor[1])
    order = np.lexsort((cand[:, 0], cand[:, 1], d))[: iv.count]
    events = []
    for k in order:
        a = world.add_animal(iv.species, (int(cand[k, 0]), int(cand[k, 1])), orientation=int(rng.integers(24)) * 15)
        events.append(Event(world.clock, "introduced", a.species, a.id, "", *a.position))
    return events


def apply_interventions(world: World, schedule: ScenarioSchedule, t: int, rng: np.random.Generator) -> list[Event]:
    """Bring the world in line with every schedule entry at step ``t``."""
    if not 0 <= t < schedule.total_steps:
        raise ValueError(f"step {t} outside [0, {schedule.total_steps})")
    events: list[Event] = []
    for iv in schedule.interventions:
        if isinstance(iv, SeaLevel):
            level = iv.levels(t)
            if level != world.grid.sea_level:
                events.append(Event(t, "sea_level", "", -1, f"{level:g}", 0.0, 0.0))
                events.extend(world.set_grid(set_sea_level(world.grid, level)))
        elif isinstance(iv, (LandCoverChange, RoadKill)) and t == iv.at_step:
            cover = LandCover.ROAD if isinstance(iv, RoadKill) else iv.cover
            region = iv.corridor if isinstance(iv, RoadKill) else iv.region
            events.append(Event(t, iv.kind, "", -1, cover.name.lower(), 0.0, 0.0))
            events.extend(world.set_grid(set_land_cover(world.grid, region, cover)))
        elif isinstance(iv, FertilityMultiplier):
            world.fertility[iv.species] = iv.factor(t)
        elif isinstance(iv, IntroduceAnimals) and t == iv.at_step:
            events.extend(introduce(world, iv, rng))
        elif isinstance(iv, PolluteWater) and t == iv.at_step:
            world.polluted |= iv.region.mask(world.grid.shape)
            events.append(Event(t, "pollute_water", "", -1, "", 0.0, 0.0))
    return events


def road_crossing_check(
    world: World, animal: AnimalState, corridor: np.ndarray, kill_probability: float, rng: np.random.Generator
) -> Event | None:
    """Kill with ``kill_probability`` if this step's move entered the corridor."""
    if animal.last_move is None or kill_probability <= 0.0:
        return None
    src, dst, _ = animal.last_move
    if src == dst or not corridor[dst[1], dst[0]]:
        return None
    if rng.random() < kill_probability:
        return world.kill(animal, "road_kill")
    return None


def hunting_cull(world: World, species: str, cull_probability: float, rng: np.random.Generator) -> list[Event]:
    if not 0.0 <= cull_probability <= 1.0:
        raise ValueError("cull probability must lie in [0, 1]")
    events = []
    if cull_probability == 0.0:
        return events
    for i in world.alive_ids(species):
        if rng.random() < cull_probability:
            events.append(world.kill(world.animals[i], "hunted"))
    return events


def _post_step(world: World, schedule: ScenarioSchedule, t: int, rng: np.random.Generator, masks: dict) -> list[Event]:
    events: list[Event] = []
    for iv in schedule.interventions:
        if isinstance(iv, RoadKill) and t >= iv.at_step:
            p = iv.kill_probability(t)
            mask = masks[id(iv)] & (world.grid.effective_cover == LandCover.ROAD)
            for i in list(world.animals):
                ev = road_crossing_check(world, world.animals[i], mask, p, rng)
                if ev is not None:
                    events.append(ev)
        elif isinstance(iv, Hunting) and world.clock % iv.interval == 0:
            events.extend(hunting_cull(world, iv.species, iv.cull_probability(t), rng))
    return events


# ---------------------------------------------------------------------------
# runs


def build_world(
    grid: TerrainGrid, vegetation: Sequence[VegetationPlacement], params: ScenarioParams, seed: int
) -> World:
    return World(
        grid,
        params.species,
        vegetation,
        params.plants,
        config=params.world_config,
        density_table=params.density_table,
        rng=stream(seed, "world"),
    )


def advance(world: World, policies: Mapping[str, object], rng: np.random.Generator,
            spec: ObservationSpec = DEFAULT_SPEC) -> list[Event]:
    """One policy-driven world step (the plain simulation loop body)."""
    actions = choose_actions(world, policies, rng, spec)
    events, _ = step_world(world, actions)
    return events


def run_scenario(
    grid: TerrainGrid,
    vegetation: Sequence[VegetationPlacement],
    policies: Mapping[str, object],
    params: ScenarioParams,
    schedule: ScenarioSchedule,
    seed: int,
) -> tuple[PopulationTimeSeries, list[Event]]:
    introduced = {iv.species for iv in params.initial}
    introduced |= {iv.species for iv in schedule.interventions if isinstance(iv, IntroduceAnimals)}
    missing = sorted(s for s in introduced if s not in policies)
    if missing:
        raise KeyError(f"missing policy for introduced species: {', '.join(missing)}")
    for s in introduced:
        if s not in params.species:
            raise KeyError(f"no species parameters for {s!r}")

    world = build_world(grid, vegetation, params, seed)
    rng_iv = stream(seed, "interventions")
    rng_act = stream(seed, "actions")
    events: list[Event] = []
    for iv in params.initial:
        events.extend(introduce(world, iv, rng_iv))
    masks = {id(iv): iv.corridor.mask(grid.shape) for iv in schedule.interventions if isinstance(iv, RoadKill)}
    last_intro = max([iv.at_step for iv in schedule.interventions if isinstance(iv, IntroduceAnimals)], default=-1)

    series = PopulationTimeSeries(counts={sp: [] for sp in params.species}, markers=schedule.marker_steps())
    series.end_step = schedule.total_steps
    for t in range(schedule.total_steps):
        events.extend(apply_interventions(world, schedule, t, rng_iv))
        if t % schedule.record_interval == 0:
            series.record(t, world)
        if not world.animals and t >= last_intro:
            events.append(Event(t, "extinction", "", -1, "all animals dead", 0.0, 0.0))
            series.end_step = t
            break
        events.extend(advance(world, policies, rng_act, params.observation))
        events.extend(_post_step(world, schedule, t, rng_iv, masks))
    for t in range(len(series.steps) * schedule.record_interval, schedule.total_steps, schedule.record_interval):
        series.steps.append(t)
        for sp in series.counts:
            series.counts[sp].append(0)

    for ev in events:
        if ev.event_type == "death":
            series.death_causes.setdefault(ev.species, Counter())[ev.cause] += 1
            if ev.cause in ("road_kill", "hunted"):
                series.intervention_counts[ev.cause] += 1
    return series, events
