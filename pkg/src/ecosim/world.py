"""Entity state and the discrete time step of the ecosystem.

One call to :func:`step_world` advances the clock by one step through a
fixed phase order:

1. movement and turning (tree collisions bleed resources)
2. sea-entry deaths
3. eating: plants for herbivores, prey for predators
4. metabolism
5. ageing, starvation, dehydration and old-age deaths
6. predation meals completing after the eating lock
7. reproduction (conception, gestation, birth)
8. plant regrowth and spreading
9. utility update and reward emission
10. clock increment
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from typing import Iterable, Mapping

import numpy as np

from .terrain import (
    DEFAULT_DENSITY,
    NO_VEGETATION,
    LandCover,
    TerrainGrid,
    VegetationPlacement,
    slope_degrees,
)


class Action(IntEnum):
    STAND_STILL = 0
    MOVE_FORWARD = 1
    TURN_LEFT = 2
    TURN_RIGHT = 3


N_ACTIONS = len(Action)
TURN_STEP = 15

# unit displacement per orientation; 0 deg = north, clockwise, y grows south
_HEADINGS = {
    deg: (round(math.sin(math.radians(deg)), 12), round(-math.cos(math.radians(deg)), 12))
    for deg in range(0, 360, TURN_STEP)
}

DEATH_ORDER = ("drowned", "predated", "starved", "dehydrated", "old_age")


@dataclass(frozen=True)
class SpeciesParams:
    name: str
    resource_max: float
    reproduction_threshold: float
    max_age: int
    diet: frozenset
    initial_resources: float = 2.0
    reproduction_rate: float = 0.01
    maturity_age: int = 500
    gestation_time: int = 20
    newborn_still_time: int = 100
    eat_duration: int = 1
    basic_metabolic_cost: float = 0.001
    max_uphill_cost: float = 0.001
    collision_loss: float = 0.1
    predation_yield: float = 0.75
    max_slope: float = 45.0

    def __post_init__(self):
        object.__setattr__(self, "diet", frozenset(self.diet))
        if not 0 < self.reproduction_threshold < self.resource_max:
            raise ValueError(f"{self.name}: need 0 < reproduction_threshold < resource_max")
        for name in ("basic_metabolic_cost", "max_uphill_cost", "collision_loss"):
            if getattr(self, name) < 0:
                raise ValueError(f"{self.name}: {name} must be >= 0")
        if not 0.0 <= self.predation_yield <= 1.0:
            raise ValueError(f"{self.name}: predation_yield must lie in [0, 1]")
        if not 0.0 <= self.reproduction_rate <= 1.0:
            raise ValueError(f"{self.name}: reproduction_rate must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: Mapping, base: "SpeciesParams | None" = None) -> "SpeciesParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown species parameter(s): {sorted(unknown)}")
        if base is not None:
            return replace(base, **d)
        return cls(**d)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["diet"] = sorted(self.diet)
        return d


HARE = SpeciesParams(
    "hare",
    resource_max=5.0,
    reproduction_threshold=3.5,
    max_age=10_000,
    diet=frozenset({"grass", "dandelion"}),
)
FOX = SpeciesParams(
    "fox",
    resource_max=8.0,
    reproduction_threshold=5.5,
    max_age=15_000,
    diet=frozenset({"hare"}),
    eat_duration=50,
)


def default_species() -> dict[str, SpeciesParams]:
    return {"hare": HARE, "fox": FOX}


PLANT_MODES = ("regrow_in_place", "respawn_random", "spread_roots", "spread_air")


@dataclass(frozen=True)
class PlantParams:
    """Nutrition and regrowth behaviour of one plant species."""

    species: str
    resource: str  # "glucose" or "hydration"
    amount: float = 1.0
    regrow_time: int = 1000
    mode: str = "regrow_in_place"
    spread_probability: float = 0.0
    cap: int = 10**9

    def __post_init__(self):
        if self.resource not in ("glucose", "hydration"):
            raise ValueError(f"plant resource must be glucose or hydration, got {self.resource!r}")
        if self.mode not in PLANT_MODES:
            raise ValueError(f"unknown plant mode {self.mode!r}")
        if self.regrow_time < 1:
            raise ValueError("regrow_time must be >= 1")


def default_plants() -> dict[str, PlantParams]:
    return {
        "grass": PlantParams("grass", "glucose"),
        "dandelion": PlantParams("dandelion", "hydration"),
    }


@dataclass
class AnimalState:
    id: int
    species: str
    position: tuple[float, float]
    orientation: int
    glucose: float
    hydration: float
    age: int = 0
    gestation_remaining: int | None = None
    still_remaining: int = 0
    position_history: list = field(default_factory=list)
    alive: bool = True
    utility_prev: float = 0.0
    pending_meal: tuple[float, float] | None = None
    last_move: tuple | None = None  # (from_cell, to_cell, slope) of the latest step
    killed_by: str | None = None
    cause: str | None = None

    @property
    def cell(self) -> tuple[int, int]:
        return (int(math.floor(self.position[0])), int(math.floor(self.position[1])))


@dataclass
class PlantState:
    species: str
    cell: tuple[int, int]
    available: bool = True
    regrow_remaining: int = 0
    reproduction_mode: str = "regrow_in_place"
    eaten_at: int = -1


@dataclass(frozen=True)
class Event:
    step: int
    event_type: str
    species: str
    id: int
    cause: str
    x: float
    y: float
    data: dict = field(default_factory=dict, compare=False)

    def row(self) -> list[str]:
        return [str(self.step), self.event_type, self.species, str(self.id), self.cause, f"{self.x:.6f}", f"{self.y:.6f}"]


@dataclass
class WorldConfig:
    u_death: float = 0.0
    history_len: int = 5
    reproduction: bool = True
    debug_checks: bool = False


def utility(animal: AnimalState) -> float:
    """Log-sum of ``1 + resource`` over glucose and hydration; 0 for the dead."""
    if not animal.alive:
        return 0.0
    return math.log1p(animal.glucose) + math.log1p(animal.hydration)


def utility_of(glucose: float, hydration: float) -> float:
    return math.log1p(glucose) + math.log1p(hydration)


class World:
    """Mutable ecosystem state.  Single writer: only ``step_world`` and the
    explicit edit methods change it."""

    def __init__(
        self,
        grid: TerrainGrid,
        species_params: Mapping[str, SpeciesParams] | None = None,
        vegetation: Iterable[VegetationPlacement] = (),
        plant_params: Mapping[str, PlantParams] | None = None,
        seed: int = 0,
        config: WorldConfig | None = None,
        density_table: Mapping | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.grid = grid
        self.species_params = dict(species_params or default_species())
        self.plant_params = dict(plant_params or default_plants())
        self.config = config or WorldConfig()
        self.density_table = density_table if density_table is not None else DEFAULT_DENSITY
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.clock = 0
        self.animals: dict[int, AnimalState] = {}
        self.spatial_index: dict[tuple[int, int], list[int]] = {}
        self.plants: dict[tuple[str, int, int], PlantState] = {}
        self.regrowing: dict[tuple[str, int, int], PlantState] = {}
        self.plant_layers: dict[str, np.ndarray] = {}
        self.trees = np.zeros(grid.shape, dtype=bool)
        self.polluted = np.zeros(grid.shape, dtype=bool)
        self.fertility: dict[str, float] = {}
        self.next_id = 0
        for p in vegetation:
            if p.species == "tree":
                self.trees[p.y, p.x] = True
            else:
                self.add_plant(p.species, (p.x, p.y))

    # -- bookkeeping -------------------------------------------------------

    def layer(self, species: str) -> np.ndarray:
        if species not in self.plant_layers:
            self.plant_layers[species] = np.zeros(self.grid.shape, dtype=bool)
        return self.plant_layers[species]

    def add_plant(self, species: str, cell: tuple[int, int], available: bool = True) -> PlantState:
        key = (species, cell[0], cell[1])
        if key in self.plants:
            raise ValueError(f"{species} already present at {cell}")
        if self.trees[cell[1], cell[0]]:
            raise ValueError(f"cannot place {species} on tree cell {cell}")
        pp = self.plant_params.get(species)
        mode = pp.mode if pp else "regrow_in_place"
        plant = PlantState(species, (int(cell[0]), int(cell[1])), available=available, reproduction_mode=mode)
        self.plants[key] = plant
        if available:
            self.layer(species)[cell[1], cell[0]] = True
        return plant

    def remove_plant(self, plant: PlantState) -> None:
        key = (plant.species, *plant.cell)
        del self.plants[key]
        self.regrowing.pop(key, None)
        self.layer(plant.species)[plant.cell[1], plant.cell[0]] = False

    def plant_count(self, species: str) -> int:
        return sum(1 for k in self.plants if k[0] == species)

    def add_animal(
        self,
        species: str,
        position,
        orientation: int = 0,
        glucose: float | None = None,
        hydration: float | None = None,
        age: int = 0,
        still: int = 0,
    ) -> AnimalState:
        """Place an animal.  Integer ``position`` means a cell; it is centred."""
        sp = self.species_params[species]
        x, y = position
        if isinstance(x, (int, np.integer)) and isinstance(y, (int, np.integer)):
            x, y = x + 0.5, y + 0.5
        if orientation % TURN_STEP:
            raise ValueError("orientation must be a multiple of 15 degrees")
        g = sp.initial_resources if glucose is None else glucose
        h = sp.initial_resources if hydration is None else hydration
        a = AnimalState(
            id=self.next_id,
            species=species,
            position=(float(x), float(y)),
            orientation=int(orientation) % 360,
            glucose=min(max(g, 0.0), sp.resource_max),
            hydration=min(max(h, 0.0), sp.resource_max),
            age=age,
            still_remaining=still,
        )
        a.utility_prev = utility(a)
        self.next_id += 1
        self.animals[a.id] = a
        self.spatial_index.setdefault(a.cell, []).append(a.id)
        return a

    def _move_index(self, a: AnimalState, old: tuple[int, int]) -> None:
        new = a.cell
        if new != old:
            ids = self.spatial_index[old]
            ids.remove(a.id)
            if not ids:
                del self.spatial_index[old]
            self.spatial_index.setdefault(new, []).append(a.id)

    def kill(self, a: AnimalState, cause: str) -> Event:
        a.alive = False
        a.cause = cause
        ids = self.spatial_index[a.cell]
        ids.remove(a.id)
        if not ids:
            del self.spatial_index[a.cell]
        del self.animals[a.id]
        return Event(self.clock, "death", a.species, a.id, cause, a.position[0], a.position[1],
                     {"glucose": a.glucose, "hydration": a.hydration, "age": a.age})

    def alive_ids(self, species: str | None = None) -> list[int]:
        return [i for i, a in self.animals.items() if species is None or a.species == species]

    def acting_ids(self) -> list[int]:
        """Animals that choose an action this step (not still-locked)."""
        return [i for i, a in self.animals.items() if a.still_remaining == 0]

    def count(self, species: str) -> int:
        return sum(1 for a in self.animals.values() if a.species == species)

    def animals_at(self, cell: tuple[int, int]) -> list[int]:
        return self.spatial_index.get(cell, [])

    def is_free(self, cell: tuple[int, int]) -> bool:
        x, y = cell
        return (
            self.grid.in_bounds(x, y)
            and self.grid.walkable[y, x]
            and not self.trees[y, x]
            and not self.spatial_index.get(cell)
        )

    def vegetation_eligible(self) -> np.ndarray:
        return ~np.isin(self.grid.effective_cover, NO_VEGETATION) & ~self.trees

    def set_grid(self, grid: TerrainGrid) -> list[Event]:
        if grid.shape != self.grid.shape:
            raise ValueError("replacement grid must keep its dimensions")
        self.grid = grid
        return sync_vegetation(self)

    def check_index(self) -> None:
        seen = 0
        for i, a in self.animals.items():
            if i not in self.spatial_index.get(a.cell, ()):
                raise AssertionError(f"spatial index missing animal {i} at {a.cell}")
        for cell, ids in self.spatial_index.items():
            for i in ids:
                seen += 1
                if i not in self.animals or self.animals[i].cell != cell:
                    raise AssertionError(f"stale spatial index entry {i} at {cell}")
        if seen != len(self.animals):
            raise AssertionError("spatial index size mismatch")


# ---------------------------------------------------------------------------
# per-animal operations


def _record_history(world: World, a: AnimalState) -> None:
    a.position_history.append(a.position)
    k = world.config.history_len
    if len(a.position_history) > k:
        del a.position_history[: len(a.position_history) - k]


def apply_action(world: World, animal: AnimalState, action) -> list[Event]:
    """Change pose.  Blocked moves degrade to no-ops; trees also bleed."""
    action = Action(action)
    sp = world.species_params[animal.species]
    src = animal.cell
    animal.last_move = (src, src, 0.0)
    events: list[Event] = []
    if action == Action.TURN_LEFT:
        animal.orientation = (animal.orientation - TURN_STEP) % 360
    elif action == Action.TURN_RIGHT:
        animal.orientation = (animal.orientation + TURN_STEP) % 360
    elif action == Action.MOVE_FORWARD:
        dx, dy = _HEADINGS[animal.orientation]
        pos = (round(animal.position[0] + dx, 9), round(animal.position[1] + dy, 9))
        dest = (int(math.floor(pos[0])), int(math.floor(pos[1])))
        grid = world.grid
        slope = 0.0
        if dest != src and not grid.is_sea(*dest):
            if grid.effective_cover[dest[1], dest[0]] == LandCover.POLLUTED_WATER:
                return events
            slope = slope_degrees(grid, src, dest)
            if slope > sp.max_slope:
                return events
            if world.trees[dest[1], dest[0]]:
                animal.glucose = max(animal.glucose - sp.collision_loss, 0.0)
                animal.hydration = max(animal.hydration - sp.collision_loss, 0.0)
                events.append(Event(world.clock, "collision", animal.species, animal.id, "tree", *animal.position))
                return events
        _record_history(world, animal)
        animal.position = pos
        animal.last_move = (src, dest, slope)
        world._move_index(animal, src)
    return events


def _gain(animal: AnimalState, resource: str, amount: float, cap: float) -> float:
    old = getattr(animal, resource)
    new = min(old + amount, cap)
    setattr(animal, resource, new)
    return new - old


def eat(world: World, animal: AnimalState) -> list[Event]:
    """Consume what is edible on the animal's cell (it stood still this step)."""
    sp = world.species_params[animal.species]
    events: list[Event] = []
    if animal.pending_meal is not None:
        return events
    x, y = animal.cell
    for species in sorted(sp.diet):
        plant = world.plants.get((species, x, y))
        if plant is not None and plant.available:
            pp = world.plant_params[species]
            amount = 0.0 if (world.polluted[y, x] and pp.resource == "hydration") else pp.amount
            gained = _gain(animal, pp.resource, amount, sp.resource_max)
            plant.available = False
            plant.regrow_remaining = pp.regrow_time
            plant.eaten_at = world.clock
            world.regrowing[(species, x, y)] = plant
            world.layer(species)[y, x] = False
            events.append(Event(world.clock, "eat", animal.species, animal.id, species, *animal.position,
                                {"resource": pp.resource, "offered": amount, "gained": gained}))
    prey_species = sp.diet & set(world.species_params)
    if prey_species:
        prey = [
            world.animals[i]
            for i in sorted(world.animals_at((x, y)))
            if i != animal.id and world.animals[i].species in prey_species
        ]
        if prey:
            victim = prey[0]
            gain = (sp.predation_yield * victim.glucose, sp.predation_yield * victim.hydration)
            animal.pending_meal = gain
            animal.still_remaining = sp.eat_duration
            events.append(Event(world.clock, "predation", animal.species, animal.id, victim.species, *animal.position,
                                {"prey_id": victim.id, "prey_glucose": victim.glucose, "prey_hydration": victim.hydration,
                                 "gain_glucose": gain[0], "gain_hydration": gain[1]}))
            victim.killed_by = animal.species
            events.append(world.kill(victim, "predated"))
    return events


def metabolize(world: World, animal: AnimalState, moved_uphill_slope: float = 0.0) -> tuple[float, float]:
    sp = world.species_params[animal.species]
    cost = sp.basic_metabolic_cost + sp.max_uphill_cost * max(0.0, moved_uphill_slope) / sp.max_slope
    g0, h0 = animal.glucose, animal.hydration
    animal.glucose = max(g0 - cost, 0.0)
    animal.hydration = max(h0 - cost, 0.0)
    return (animal.glucose - g0, animal.hydration - h0)


def check_death(world: World, animal: AnimalState) -> str | None:
    """First applicable cause in the fixed precedence order, or None."""
    sp = world.species_params[animal.species]
    x, y = animal.cell
    if world.grid.is_sea(x, y):
        return "drowned"
    if animal.killed_by is not None:
        return "predated"
    if animal.glucose <= 0.0:
        return "starved"
    if animal.hydration <= 0.0:
        return "dehydrated"
    if animal.age >= sp.max_age:
        return "old_age"
    return None


def conception_probability(world: World, animal: AnimalState) -> float:
    sp = world.species_params[animal.species]
    if animal.age < sp.maturity_age or animal.gestation_remaining is not None:
        return 0.0
    level = min(animal.glucose, animal.hydration)
    if level <= sp.reproduction_threshold:
        return 0.0
    ramp = (level - sp.reproduction_threshold) / (sp.resource_max - sp.reproduction_threshold)
    return min(1.0, sp.reproduction_rate * world.fertility.get(animal.species, 1.0) * ramp)


def _free_neighbour(world: World, cell: tuple[int, int]) -> tuple[int, int] | None:
    x, y = cell
    free = [
        (x + dx, y + dy)
        for dy in (-1, 0, 1)
        for dx in (-1, 0, 1)
        if (dx, dy) != (0, 0) and world.is_free((x + dx, y + dy))
    ]
    if not free:
        return None
    return free[int(world.rng.integers(len(free)))]


def try_reproduce(world: World, animal: AnimalState) -> tuple[AnimalState | None, list[Event]]:
    sp = world.species_params[animal.species]
    events: list[Event] = []
    if animal.gestation_remaining is not None:
        if animal.gestation_remaining > 0:
            animal.gestation_remaining -= 1
        if animal.gestation_remaining > 0:
            return None, events
        cell = _free_neighbour(world, animal.cell)
        if cell is None:
            return None, events
        child = world.add_animal(
            animal.species,
            cell,
            orientation=int(world.rng.integers(360 // TURN_STEP)) * TURN_STEP,
            still=sp.newborn_still_time,
        )
        animal.gestation_remaining = None
        animal.glucose = max(animal.glucose - sp.initial_resources, 0.0)
        animal.hydration = max(animal.hydration - sp.initial_resources, 0.0)
        events.append(Event(world.clock, "birth", child.species, child.id, f"parent={animal.id}", *child.position))
        return child, events
    p = conception_probability(world, animal)
    if p > 0.0 and world.rng.random() < p:
        animal.gestation_remaining = sp.gestation_time
        events.append(Event(world.clock, "conception", animal.species, animal.id, "", *animal.position, {"p": p}))
    return None, events


def _random_cell(world: World, weights: np.ndarray) -> tuple[int, int] | None:
    flat = weights.ravel()
    total = flat.sum()
    if total <= 0:
        return None
    idx = int(world.rng.choice(flat.size, p=flat / total))
    y, x = divmod(idx, world.grid.width)
    return (x, y)


def regrow_plants(world: World) -> list[Event]:
    events: list[Event] = []
    for key, plant in list(world.regrowing.items()):
        if plant.eaten_at == world.clock:
            continue
        plant.regrow_remaining -= 1
        if plant.regrow_remaining > 0:
            continue
        del world.regrowing[key]
        pp = world.plant_params.get(plant.species)
        if pp is not None and pp.mode == "respawn_random":
            target = _random_cell(world, _respawn_weights(world, plant.species))
            if target is not None and target != plant.cell:
                world.remove_plant(plant)
                world.add_plant(plant.species, target)
                events.append(Event(world.clock, "plant_respawn", plant.species, -1, "", *target))
                continue
        plant.available = True
        world.layer(plant.species)[plant.cell[1], plant.cell[0]] = True
        events.append(Event(world.clock, "plant_regrow", plant.species, -1, "", *plant.cell))

    spreading = {
        k: pp for k, pp in world.plant_params.items()
        if pp.mode in ("spread_roots", "spread_air") and pp.spread_probability > 0
    }
    if not spreading:
        return events
    counts: dict[str, int] = {}
    for key in world.plants:
        counts[key[0]] = counts.get(key[0], 0) + 1
    spawned: list[tuple[str, tuple[int, int]]] = []
    for plant in [p for p in world.plants.values() if p.species in spreading and p.available]:
        pp = spreading[plant.species]
        if counts.get(plant.species, 0) >= pp.cap:
            continue
        if world.rng.random() >= pp.spread_probability:
            continue
        w = _respawn_weights(world, plant.species, uniform=True)
        for s_name, c in spawned:
            if s_name == plant.species:
                w[c[1], c[0]] = 0.0
        if pp.mode == "spread_roots":
            x, y = plant.cell
            near = np.zeros_like(w)
            y0, y1, x0, x1 = max(y - 1, 0), y + 2, max(x - 1, 0), x + 2
            near[y0:y1, x0:x1] = w[y0:y1, x0:x1]
            w = near
        target = _random_cell(world, w)
        if target is not None:
            spawned.append((plant.species, target))
            counts[plant.species] = counts.get(plant.species, 0) + 1
    for species, cell in spawned:
        world.add_plant(species, cell)
        events.append(Event(world.clock, "plant_spawn", species, -1, "", *cell))
    return events


def _respawn_weights(world: World, species: str, uniform: bool = False) -> np.ndarray:
    eligible = world.vegetation_eligible()
    if uniform:
        w = eligible.astype(float)
    else:
        w = np.zeros(world.grid.shape)
        eff = world.grid.effective_cover
        for cover, table in world.density_table.items():
            w[eff == LandCover.parse(cover)] = float(table.get(species, 0.0))
        w[~eligible] = 0.0
    w[world.layer(species)] = 0.0
    for key, p in world.plants.items():
        if key[0] == species:
            w[p.cell[1], p.cell[0]] = 0.0
    return w


def sync_vegetation(world: World) -> list[Event]:
    """Drop plants and trees standing on cells that can no longer carry them."""
    bad = np.isin(world.grid.effective_cover, NO_VEGETATION)
    events: list[Event] = []
    for plant in list(world.plants.values()):
        x, y = plant.cell
        if bad[y, x]:
            world.remove_plant(plant)
            events.append(Event(world.clock, "plant_removed", plant.species, -1, "terrain", x, y))
    dead_trees = world.trees & bad
    if dead_trees.any():
        for y, x in zip(*np.nonzero(dead_trees)):
            events.append(Event(world.clock, "plant_removed", "tree", -1, "terrain", int(x), int(y)))
        world.trees &= ~bad
    return events


# ---------------------------------------------------------------------------
# the step


def step_world(world: World, actions: Mapping[int, int]) -> tuple[list[Event], dict[int, float]]:
    """Advance one step.  ``actions`` covers every acting (non-locked) animal;
    entries for still-locked animals are ignored (they stand still)."""
    for i in actions:
        if i not in world.animals:
            raise KeyError(f"action for unknown or dead animal {i}")
    start = dict(world.animals)
    for i, a in start.items():
        if a.still_remaining == 0 and i not in actions:
            raise KeyError(f"missing action for animal {i}")
    events: list[Event] = []
    check = world.config.debug_checks

    stood: set[int] = set()
    for i, a in start.items():
        act = Action.STAND_STILL if a.still_remaining > 0 else Action(actions[i])
        if act == Action.STAND_STILL:
            stood.add(i)
            a.last_move = (a.cell, a.cell, 0.0)
        events.extend(apply_action(world, a, act))
    if check:
        world.check_index()

    for a in list(world.animals.values()):
        if world.grid.is_sea(*a.cell):
            events.append(world.kill(a, "drowned"))
    if check:
        world.check_index()

    for i in sorted(stood):
        a = world.animals.get(i)
        if a is not None:
            events.extend(eat(world, a))
    if check:
        world.check_index()

    for a in world.animals.values():
        src, dst, slope = a.last_move
        metabolize(world, a, slope if dst != src else 0.0)

    for a in list(world.animals.values()):
        a.age += 1
        cause = check_death(world, a)
        if cause is not None:
            events.append(world.kill(a, cause))
    if check:
        world.check_index()

    for a in world.animals.values():
        if a.still_remaining > 0:
            a.still_remaining -= 1
            if a.still_remaining == 0 and a.pending_meal is not None:
                sp = world.species_params[a.species]
                gg = _gain(a, "glucose", a.pending_meal[0], sp.resource_max)
                gh = _gain(a, "hydration", a.pending_meal[1], sp.resource_max)
                events.append(Event(world.clock, "meal", a.species, a.id, "", *a.position,
                                    {"offered_glucose": a.pending_meal[0], "offered_hydration": a.pending_meal[1],
                                     "gained_glucose": gg, "gained_hydration": gh}))
                a.pending_meal = None

    if world.config.reproduction:
        for a in list(world.animals.values()):
            if a.id in start:
                _, ev = try_reproduce(world, a)
                events.extend(ev)
    if check:
        world.check_index()

    events.extend(regrow_plants(world))

    rewards: dict[int, float] = {}
    for i, a in start.items():
        u = utility(a) if a.alive else world.config.u_death
        rewards[i] = u - a.utility_prev
        a.utility_prev = u
    world.clock += 1
    return events, rewards


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "ecosim-world"
CHECKPOINT_VERSION = 1


def world_to_dict(world: World) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "clock": world.clock,
        "next_id": world.next_id,
        "grid": {
            "altitude": world.grid.altitude.tolist(),
            "cover": world.grid.cover.tolist(),
            "sea_level": world.grid.sea_level,
        },
        "trees": np.argwhere(world.trees).tolist(),
        "polluted": np.argwhere(world.polluted).tolist(),
        "fertility": world.fertility,
        "config": {f.name: getattr(world.config, f.name) for f in fields(world.config)},
        "species": {k: v.to_dict() for k, v in world.species_params.items()},
        "plant_params": {k: {f.name: getattr(v, f.name) for f in fields(v)} for k, v in world.plant_params.items()},
        "density": {LandCover.parse(c).name.lower(): dict(t) for c, t in world.density_table.items()},
        "animals": [
            {f.name: getattr(a, f.name) for f in fields(a)} for a in world.animals.values()
        ],
        "plants": [{f.name: getattr(p, f.name) for f in fields(p)} for p in world.plants.values()],
        "regrowing": [list(k) for k in world.regrowing],
        "rng": world.rng.bit_generator.state,
    }


def world_from_dict(d: Mapping) -> World:
    if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
        raise ValueError("not a world checkpoint of a supported version")
    grid = TerrainGrid(np.array(d["grid"]["altitude"]), np.array(d["grid"]["cover"]), d["grid"]["sea_level"])
    species = {k: SpeciesParams.from_dict(v) for k, v in d["species"].items()}
    plants = {k: PlantParams(**v) for k, v in d["plant_params"].items()}
    density = {LandCover.parse(c): t for c, t in d["density"].items()}
    bitgen = getattr(np.random, d["rng"]["bit_generator"])()
    bitgen.state = d["rng"]
    w = World(grid, species, (), plants, config=WorldConfig(**d["config"]), density_table=density,
              rng=np.random.Generator(bitgen))
    for y, x in d["trees"]:
        w.trees[y, x] = True
    for y, x in d["polluted"]:
        w.polluted[y, x] = True
    w.fertility = dict(d["fertility"])
    w.clock = d["clock"]
    for p in d["plants"]:
        ps = PlantState(**{**p, "cell": tuple(p["cell"])})
        w.plants[(ps.species, *ps.cell)] = ps
        if ps.available:
            w.layer(ps.species)[ps.cell[1], ps.cell[0]] = True
    for k in d["regrowing"]:
        key = (k[0], int(k[1]), int(k[2]))
        w.regrowing[key] = w.plants[key]
    for rec in d["animals"]:
        rec = dict(rec)
        rec["position"] = tuple(rec["position"])
        rec["position_history"] = [tuple(p) for p in rec["position_history"]]
        if rec["pending_meal"] is not None:
            rec["pending_meal"] = tuple(rec["pending_meal"])
        if rec["last_move"] is not None:
            src, dst, s = rec["last_move"]
            rec["last_move"] = (tuple(src), tuple(dst), s)
        a = AnimalState(**rec)
        w.animals[a.id] = a
        w.spatial_index.setdefault(a.cell, []).append(a.id)
    w.next_id = d["next_id"]
    return w


def save_world(world: World, path) -> None:
    with open(path, "w") as fh:
        json.dump(world_to_dict(world), fh)


def load_world(path) -> World:
    with open(path) as fh:
        return world_from_dict(json.load(fh))
