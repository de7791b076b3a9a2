"""Episodes, curriculum stages and the sequential training loop."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Mapping, Sequence

import numpy as np

from .perception import DEFAULT_SPEC, ObservationSpec, encode_batch
from .policy import ActorCritic, PPOHyperparams, RandomPolicy, Trajectory, make_optimizer, ppo_update
from .rng import derive_seed, stream
from .terrain import FLAT, HILLY, IslandParams, generate_island, place_vegetation
from .world import PlantParams, World, WorldConfig, default_plants, default_species, step_world

WorldFactory = Callable[[int], tuple[World, int]]


@dataclass(frozen=True)
class StageConfig:
    """One curriculum stage: which island to build and who lives on it."""

    name: str
    island_size: int = 50
    terrain: str = "flat"  # flat | hilly | full
    trees: int = 0
    grass: int = 400
    dandelion: int = 400
    hares: int = 0
    foxes: int = 0
    episodes: int = 100
    max_steps: int = 5000
    regrow_time: int = 1000
    reproduction: bool = False

    @classmethod
    def from_dict(cls, d: Mapping) -> "StageConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown stage field(s): {sorted(unknown)}")
        return cls(**d)


_TERRAIN = {
    "flat": FLAT,
    "hilly": IslandParams(forest_fraction=0.0, rock_fraction=0.0, land_fraction=0.8),
    "full": HILLY,
}


def hare_curriculum(episodes: int = 100, max_steps: int = 5000) -> list[StageConfig]:
    return [
        StageConfig("I", 50, "flat", episodes=episodes, max_steps=max_steps),
        StageConfig("II", 100, "flat", trees=300, grass=1000, dandelion=1000, episodes=episodes, max_steps=max_steps),
        StageConfig("III", 200, "hilly", trees=1000, grass=1000, dandelion=1000, episodes=episodes, max_steps=max_steps),
        StageConfig("IV", 200, "full", trees=1000, grass=1000, dandelion=1000, hares=10, episodes=episodes, max_steps=max_steps),
        StageConfig("V", 200, "full", trees=1000, grass=1000, dandelion=1000, hares=10, foxes=3,
                    episodes=episodes, max_steps=max_steps),
    ]


def fox_curriculum(episodes: int = 100, max_steps: int = 5000) -> list[StageConfig]:
    return [
        StageConfig("i", 50, "flat", hares=60, episodes=episodes, max_steps=max_steps),
        StageConfig("ii", 100, "flat", trees=300, grass=1000, dandelion=1000, hares=120, episodes=episodes, max_steps=max_steps),
        StageConfig("iii", 200, "hilly", trees=1000, grass=1000, dandelion=1000, hares=200, episodes=episodes, max_steps=max_steps),
        StageConfig("iv", 200, "full", trees=1000, grass=1000, dandelion=1000, hares=200, foxes=3,
                    episodes=episodes, max_steps=max_steps),
    ]


def stage_factory(stage: StageConfig, focal_species: str) -> WorldFactory:
    """World factory for ``stage``; every episode seed builds a fresh island."""

    def build(seed: int) -> tuple[World, int]:
        grid = generate_island(stage.island_size, derive_seed(seed, "island"), _TERRAIN[stage.terrain])
        counts = {"tree": stage.trees, "grass": stage.grass, "dandelion": stage.dandelion}
        veg = place_vegetation(grid, None, {k: v for k, v in counts.items() if v}, derive_seed(seed, "vegetation"))
        plants = {k: PlantParams(**{**asdict(v), "regrow_time": stage.regrow_time}) for k, v in default_plants().items()}
        world = World(
            grid,
            default_species(),
            veg,
            plants,
            config=WorldConfig(reproduction=stage.reproduction),
            rng=stream(seed, "world"),
        )
        rng = stream(seed, "placement")
        focal = _place(world, focal_species, 1, rng)[0]
        _place(world, "hare", stage.hares, rng)
        _place(world, "fox", stage.foxes, rng)
        return world, focal

    return build


def _place(world: World, species: str, n: int, rng: np.random.Generator) -> list[int]:
    free = world.grid.walkable & ~world.trees
    for cell in world.spatial_index:
        free[cell[1], cell[0]] = False
    ys, xs = np.nonzero(free)
    if n > len(xs):
        raise ValueError(f"not enough free cells for {n} {species}")
    pick = rng.choice(len(xs), size=n, replace=False)
    return [
        world.add_animal(species, (int(xs[k]), int(ys[k])), orientation=int(rng.integers(24)) * 15).id
        for k in sorted(pick)
    ]


def choose_actions(
    world: World,
    policies: Mapping[str, object],
    rng: np.random.Generator,
    spec: ObservationSpec = DEFAULT_SPEC,
    greedy: bool = False,
) -> dict[int, int]:
    """One action per acting animal, each species through its own network."""
    ids = world.acting_ids()
    actions: dict[int, int] = {}
    if not ids:
        return actions
    obs = encode_batch(world, ids, spec)
    by_species: dict[str, list[int]] = {}
    for j, i in enumerate(ids):
        by_species.setdefault(world.animals[i].species, []).append(j)
    for species in sorted(by_species):
        rows = by_species[species]
        pol = policies.get(species)
        if pol is None:
            raise KeyError(f"no policy for species {species!r}")
        acts, _, _ = pol.act_batch(obs[rows], rng, greedy=greedy)
        for j, a in zip(rows, acts):
            actions[ids[j]] = int(a)
    return actions


def run_episode(
    world_factory: WorldFactory,
    policy,
    max_steps: int,
    seed: int,
    other_policies: Mapping[str, object] | None = None,
    spec: ObservationSpec = DEFAULT_SPEC,
    greedy: bool = False,
    stage: str = "",
) -> Trajectory:
    """Roll out the focal agent until it dies or ``max_steps`` elapse.

    Conspecifics act greedily under the same weights; other species use
    ``other_policies`` (uniform random when absent).  Steps during which the
    focal animal is locked (eating) are not decisions: their reward is folded
    into the preceding transition.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    world, focal = world_factory(seed)
    species = world.animals[focal].species
    others = dict(other_policies or {})
    rng = stream(seed, "actions")
    traj = Trajectory(species=species, stage=stage, seed=seed)
    last_obs = None
    for t in range(max_steps):
        ids = world.acting_ids()
        obs = encode_batch(world, ids, spec) if ids else np.zeros((0, spec.size))
        actions: dict[int, int] = {}
        groups: dict[str, list[int]] = {}
        focal_row = None
        for j, i in enumerate(ids):
            if i == focal:
                focal_row = j
            else:
                groups.setdefault(world.animals[i].species, []).append(j)
        if focal_row is not None:
            a, lp, v = policy.act_batch(obs[focal_row : focal_row + 1], rng, greedy=greedy)
            actions[focal] = int(a[0])
            last_obs = obs[focal_row]
        for sp_name in sorted(groups):
            rows = groups[sp_name]
            pol = policy if sp_name == species else others.get(sp_name, RandomPolicy())
            acts, _, _ = pol.act_batch(obs[rows], rng, greedy=(sp_name == species) or greedy)
            for j, act in zip(rows, acts):
                actions[ids[j]] = int(act)
        _, rewards = step_world(world, actions)
        r = rewards[focal]
        died = focal not in world.animals
        if focal_row is not None:
            traj.append(obs[focal_row].astype(np.float32), a[0], lp[0], r, v[0], died)
        elif len(traj):
            traj.rewards[-1] += r
            traj.dones[-1] = died
        traj.length = t + 1
        if died:
            break
    if len(traj) and not traj.dones[-1] and focal in world.animals:
        if world.animals[focal].still_remaining == 0:
            x = encode_batch(world, [focal], spec)
            _, _, v = policy.act_batch(x, rng, greedy=True)
            traj.bootstrap_value = float(v[0])
        else:
            traj.bootstrap_value = traj.values[-1]
    return traj


def evaluate(policy, world_factory: WorldFactory, seeds: Sequence[int], max_steps: int, **kw) -> np.ndarray:
    """Survival length of the focal agent per seed."""
    return np.array([run_episode(world_factory, policy, max_steps, s, **kw).length for s in seeds])


LOG_COLUMNS = ("stage", "episode", "return", "length", "policy_loss", "value_loss", "entropy")


@dataclass
class TrainingResult:
    policy: ActorCritic
    log: list[dict] = field(default_factory=list)
    stage_weights: list[np.ndarray] = field(default_factory=list)


def train_curriculum(
    species: str,
    stages: Sequence[StageConfig],
    hyperparams: PPOHyperparams | None = None,
    seed: int = 0,
    policy: ActorCritic | None = None,
    hidden_size: int = 128,
    other_policies: Mapping[str, object] | None = None,
    spec: ObservationSpec = DEFAULT_SPEC,
    progress: Callable[[dict], None] | None = None,
) -> TrainingResult:
    """Train one species through ``stages`` in order, carrying weights forward."""
    if not stages:
        raise ValueError("curriculum needs at least one stage")
    hp = hyperparams or PPOHyperparams()
    if policy is None:
        policy = ActorCritic(spec.size, hidden_size, species=species, seed=derive_seed(seed, "init"))
    elif policy.input_size != spec.size:
        raise ValueError("policy input size does not match observation layout")
    optimizer = make_optimizer(hp)
    result = TrainingResult(policy)
    for si, stage in enumerate(stages):
        factory = stage_factory(stage, species)
        snap = policy.snapshot()
        buffer: list[Trajectory] = []
        pending = 0
        diag: dict = {}
        for ep in range(stage.episodes):
            traj = run_episode(factory, snap, stage.max_steps, derive_seed(seed, "episode", si, ep),
                               other_policies, spec, stage=stage.name)
            buffer.append(traj)
            pending += len(traj)
            if pending >= hp.rollout_steps or ep == stage.episodes - 1:
                if pending:
                    diag = ppo_update(policy, buffer, hp, optimizer, stream(seed, "minibatch", si, ep))
                if not np.all(np.isfinite(policy.theta)):
                    raise FloatingPointError(f"non-finite weights after stage {stage.name} episode {ep}")
                buffer, pending = [], 0
                snap = policy.snapshot()
            row = {
                "stage": stage.name,
                "episode": ep,
                "return": traj.total_reward,
                "length": traj.length,
                "policy_loss": diag.get("policy_loss", math.nan),
                "value_loss": diag.get("value_loss", math.nan),
                "entropy": diag.get("entropy", math.nan),
            }
            result.log.append(row)
            if progress:
                progress(row)
        result.stage_weights.append(policy.theta.copy())
    return result


def write_training_log(rows: Sequence[Mapping], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["stage"], r["episode"]] + [repr(float(r[c])) for c in LOG_COLUMNS[2:]])
