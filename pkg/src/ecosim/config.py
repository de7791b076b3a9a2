"""Versioned JSON configuration for scenario runs and training curricula.

Scenario config, version 1 (paths are relative to the config file)::

    {
      "version": 1,
      "terrain": {"generate": {"size": 50, "preset": "hilly"}}
               | {"altitude": "alt.asc", "cover": "cover.asc"},
      "vegetation": {"counts": {"tree": 125, "grass": 400, "dandelion": 400}}
                  | {"file": "vegetation.csv"},
      "species": {"mink": {"base": "fox", "resource_max": 6}},
      "plants": {"grass": {"regrow_time": 800}},
      "policies": {"hare": "hare.npz", "fox": "random"},
      "world": {"u_death": 0.0, "reproduction": true},
      "observation": {"cover_onehot": false, "channel_masks": {}},
      "initial": [{"species": "hare", "count": 5, "location": "shoreline"}],
      "total_steps": 6000,
      "record_interval": 100,
      "interventions": [
        {"kind": "road_kill", "corridor": {"rect": [24, 0, 26, 50]},
         "at_step": 0, "kill_probability": [{"at_step": 0, "value": 0.5}]},
        {"kind": "hunting", "species": "hare", "interval": 1000,
         "cull_probability": {"evenly_spaced": [0.1, 0.2, 0.4]}},
        ...
      ]
    }

A schedule is a number (constant), a list of ``{"at_step", "value"}``
points, or ``{"evenly_spaced": [...], "start": 0}`` which switches the
values on at evenly spaced steps over the run.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .curriculum import StageConfig, fox_curriculum, hare_curriculum
from .perception import ObservationSpec
from .policy import ActorCritic, PPOHyperparams, RandomPolicy
from .rng import derive_seed
from .terrain import (
    FLAT,
    HILLY,
    IslandParams,
    LandCover,
    TerrainGrid,
    VegetationPlacement,
    generate_island,
    load_terrain,
    load_vegetation,
    place_vegetation,
    region_from_dict,
)
from .world import PlantParams, SpeciesParams, WorldConfig, default_plants, default_species
from . import scenario as sc

SCHEMA_VERSION = 1
PRESETS = {"flat": FLAT, "hilly": HILLY}


class ConfigError(ValueError):
    """Bad configuration; ``where`` is ``file:line:col`` or a key path."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


def read_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1:1", "top level must be an object")
    return data


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class _Ctx:
    """Tracks the key path so errors can say where they happened."""

    def __init__(self, source: str, base_dir: Path):
        self.source = source
        self.base_dir = base_dir
        self.inputs: dict[str, str] = {}

    def fail(self, where: str, msg: str):
        raise ConfigError(f"{self.source}: {where}" if where else self.source, msg)

    def get(self, d: Mapping, key: str, where: str, kind=None, default: Any = ...):
        if not isinstance(d, Mapping):
            self.fail(where, "expected an object")
        if key not in d:
            if default is ...:
                self.fail(where, f"missing required key {key!r}")
            return default
        v = d[key]
        if kind is not None and not isinstance(v, kind) or isinstance(v, bool) and kind in (int, float, (int, float)):
            self.fail(f"{where}.{key}" if where else key, f"expected {_kind_name(kind)}, got {type(v).__name__}")
        return v

    def path(self, rel: str, where: str) -> Path:
        p = (self.base_dir / rel).resolve()
        if not p.is_file():
            self.fail(where, f"file not found: {rel}")
        self.inputs[rel] = file_digest(p)
        return p

    def guard(self, where: str, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            self.fail(where, str(exc).strip("'\""))


def _kind_name(kind) -> str:
    if isinstance(kind, tuple):
        return " or ".join(k.__name__ for k in kind)
    return kind.__name__


def _check_unknown(ctx: _Ctx, d: Mapping, allowed: set, where: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        ctx.fail(where, f"unknown key(s) {extra}")


def _check_version(ctx: _Ctx, raw: Mapping) -> None:
    v = ctx.get(raw, "version", "", int)
    if v != SCHEMA_VERSION:
        ctx.fail("version", f"unsupported schema version {v} (expected {SCHEMA_VERSION})")


# ---------------------------------------------------------------------------
# scenario


@dataclass
class ScenarioConfig:
    raw: dict
    grid: TerrainGrid
    vegetation: list[VegetationPlacement]
    policies: dict
    params: sc.ScenarioParams
    schedule: sc.ScenarioSchedule
    inputs: dict  # referenced file -> sha256

    def resolved(self) -> dict:
        """The raw config plus digests of every referenced file."""
        out = copy.deepcopy(self.raw)
        out["_inputs"] = dict(sorted(self.inputs.items()))
        return out

    def config_hash(self) -> str:
        return canonical_hash(self.resolved())


def _schedule(ctx: _Ctx, spec, where: str, total_steps: int) -> sc.Schedule:
    if isinstance(spec, Mapping) and "evenly_spaced" in spec:
        _check_unknown(ctx, spec, {"evenly_spaced", "start"}, where)
        vals = ctx.get(spec, "evenly_spaced", where, list)
        if not vals:
            ctx.fail(where, "evenly_spaced needs at least one value")
        start = ctx.get(spec, "start", where, int, 0)
        return ctx.guard(where, sc.Schedule.steps_evenly, [float(v) for v in vals], total_steps, start)
    if isinstance(spec, bool) or not isinstance(spec, (int, float, list)):
        ctx.fail(where, "schedule must be a number, a list of {at_step, value} or {evenly_spaced: [...]}")
    if isinstance(spec, list):
        for i, p in enumerate(spec):
            _check_unknown(ctx, p, {"at_step", "value"}, f"{where}[{i}]")
            ctx.get(p, "at_step", f"{where}[{i}]", int)
            ctx.get(p, "value", f"{where}[{i}]", (int, float))
    return ctx.guard(where, sc.Schedule.from_json, spec)


def _region(ctx: _Ctx, d, where: str):
    return ctx.guard(where, region_from_dict, d)


def _location(ctx: _Ctx, loc, where: str):
    if loc == "shoreline":
        return loc
    if isinstance(loc, list) and len(loc) == 2 and all(isinstance(v, (int, float)) for v in loc):
        return (float(loc[0]), float(loc[1]))
    ctx.fail(where, "location must be \"shoreline\" or [x, y]")


def _introduce(ctx: _Ctx, d, where: str, default_step: int = 0) -> sc.IntroduceAnimals:
    _check_unknown(ctx, d, {"kind", "species", "count", "location", "at_step"}, where)
    count = ctx.get(d, "count", where, int)
    if count < 0:
        ctx.fail(f"{where}.count", "count must be >= 0")
    return sc.IntroduceAnimals(
        ctx.get(d, "species", where, str),
        count,
        _location(ctx, d.get("location", "shoreline"), f"{where}.location"),
        ctx.get(d, "at_step", where, int, default_step),
    )


def _intervention(ctx: _Ctx, d, where: str, total: int):
    kind = ctx.get(d, "kind", where, str)
    g = lambda key, kind_=None, default=...: ctx.get(d, key, where, kind_, default)  # noqa: E731
    if kind == "road_kill":
        _check_unknown(ctx, d, {"kind", "corridor", "kill_probability", "at_step"}, where)
        return ctx.guard(where, sc.RoadKill, _region(ctx, g("corridor"), f"{where}.corridor"),
                         _schedule(ctx, g("kill_probability"), f"{where}.kill_probability", total), g("at_step", int, 0))
    if kind == "hunting":
        _check_unknown(ctx, d, {"kind", "species", "cull_probability", "interval"}, where)
        return ctx.guard(where, sc.Hunting, g("species", str),
                         _schedule(ctx, g("cull_probability"), f"{where}.cull_probability", total), g("interval", int, 1000))
    if kind == "sea_level":
        _check_unknown(ctx, d, {"kind", "levels"}, where)
        return sc.SeaLevel(_schedule(ctx, g("levels"), f"{where}.levels", total))
    if kind == "land_cover_change":
        _check_unknown(ctx, d, {"kind", "region", "cover", "at_step"}, where)
        cover = ctx.guard(f"{where}.cover", LandCover.parse, g("cover"))
        return sc.LandCoverChange(_region(ctx, g("region"), f"{where}.region"), cover, g("at_step", int, 0))
    if kind == "fertility_multiplier":
        _check_unknown(ctx, d, {"kind", "species", "factor"}, where)
        return ctx.guard(where, sc.FertilityMultiplier, g("species", str),
                         _schedule(ctx, g("factor"), f"{where}.factor", total))
    if kind == "introduce_animals":
        return _introduce(ctx, d, where)
    if kind == "pollute_water":
        _check_unknown(ctx, d, {"kind", "region", "at_step"}, where)
        return sc.PolluteWater(_region(ctx, g("region"), f"{where}.region"), g("at_step", int, 0))
    ctx.fail(f"{where}.kind", f"unknown intervention kind {kind!r}")


def _terrain(ctx: _Ctx, d, seed: int) -> TerrainGrid:
    if "generate" in d:
        _check_unknown(ctx, d, {"generate"}, "terrain")
        gen = ctx.get(d, "generate", "terrain", dict)
        where = "terrain.generate"
        size = ctx.get(gen, "size", where, int)
        preset = ctx.get(gen, "preset", where, str, "hilly")
        if preset not in PRESETS:
            ctx.fail(f"{where}.preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        overrides = {k: v for k, v in gen.items() if k not in ("size", "preset", "seed")}
        _check_unknown(ctx, overrides, {f.name for f in fields(IslandParams)}, where)
        params = ctx.guard(where, replace, PRESETS[preset], **overrides)
        tseed = ctx.get(gen, "seed", where, int, derive_seed(seed, "terrain"))
        return ctx.guard(where, generate_island, size, tseed, params)
    _check_unknown(ctx, d, {"altitude", "cover", "sea_level"}, "terrain")
    alt = ctx.path(ctx.get(d, "altitude", "terrain", str), "terrain.altitude")
    cov = ctx.path(ctx.get(d, "cover", "terrain", str), "terrain.cover")
    grid = ctx.guard("terrain", load_terrain, alt, cov)
    if "sea_level" in d:
        grid = replace(grid, sea_level=float(ctx.get(d, "sea_level", "terrain", (int, float))))
    return grid


def _vegetation(ctx: _Ctx, d, grid: TerrainGrid, seed: int) -> list[VegetationPlacement]:
    if "file" in d:
        _check_unknown(ctx, d, {"file"}, "vegetation")
        return ctx.guard("vegetation", load_vegetation, ctx.path(d["file"], "vegetation.file"))
    _check_unknown(ctx, d, {"counts", "density", "seed"}, "vegetation")
    counts = ctx.get(d, "counts", "vegetation", dict)
    vseed = ctx.get(d, "seed", "vegetation", int, derive_seed(seed, "vegetation"))
    density = d.get("density")
    return ctx.guard("vegetation", place_vegetation, grid, density, counts, vseed)


def _species(ctx: _Ctx, d) -> dict[str, SpeciesParams]:
    out = default_species()
    for name, over in d.items():
        where = f"species.{name}"
        if not isinstance(over, Mapping):
            ctx.fail(where, "expected an object")
        over = dict(over)
        base_name = over.pop("base", name)
        if base_name not in out:
            ctx.fail(where, f"unknown base species {base_name!r}")
        if "diet" in over:
            over["diet"] = frozenset(over["diet"])
        out[name] = ctx.guard(where, SpeciesParams.from_dict, {**over, "name": name} if base_name != name else over,
                              out[base_name])
    return out


def _plants(ctx: _Ctx, d) -> dict[str, PlantParams]:
    out = default_plants()
    for name, over in d.items():
        where = f"plants.{name}"
        if name not in out:
            ctx.fail(where, f"unknown plant species {name!r}")
        _check_unknown(ctx, over, {f.name for f in fields(PlantParams)} - {"species"}, where)
        out[name] = ctx.guard(where, replace, out[name], **over)
    return out


def _policies(ctx: _Ctx, d) -> dict:
    out = {}
    for name, ref in d.items():
        where = f"policies.{name}"
        if ref == "random":
            out[name] = RandomPolicy()
        elif isinstance(ref, str):
            out[name] = ctx.guard(where, ActorCritic.load, ctx.path(ref, where)).snapshot()
        else:
            ctx.fail(where, "policy must be a checkpoint path or \"random\"")
    return out


def parse_scenario(raw: Mapping, seed: int, base_dir=".", source: str = "<config>") -> ScenarioConfig:
    ctx = _Ctx(source, Path(base_dir))
    _check_version(ctx, raw)
    _check_unknown(ctx, raw, {"version", "description", "terrain", "vegetation", "species", "plants", "policies",
                              "world", "observation", "initial", "total_steps", "record_interval",
                              "interventions"}, "")
    total = ctx.get(raw, "total_steps", "", int)
    record = ctx.get(raw, "record_interval", "", int, 100)
    grid = _terrain(ctx, ctx.get(raw, "terrain", "", dict), seed)
    veg = _vegetation(ctx, ctx.get(raw, "vegetation", "", dict, {"counts": {}}), grid, seed)
    species = _species(ctx, ctx.get(raw, "species", "", dict, {}))
    plants = _plants(ctx, ctx.get(raw, "plants", "", dict, {}))
    policies = _policies(ctx, ctx.get(raw, "policies", "", dict))
    wcfg = ctx.get(raw, "world", "", dict, {})
    _check_unknown(ctx, wcfg, {f.name for f in fields(WorldConfig)}, "world")
    obs = ctx.get(raw, "observation", "", dict, {})
    _check_unknown(ctx, obs, {"history_len", "cover_onehot", "channel_masks"}, "observation")
    spec = ObservationSpec(**obs)
    wcfg = {"history_len": spec.history_len, **wcfg}
    initial = [_introduce(ctx, d, f"initial[{i}]") for i, d in enumerate(ctx.get(raw, "initial", "", list, []))]
    ivs = [_intervention(ctx, d, f"interventions[{i}]", total)
           for i, d in enumerate(ctx.get(raw, "interventions", "", list, []))]
    for i, iv in enumerate(ivs + initial):
        sp = getattr(iv, "species", None)
        if sp is not None and sp not in species:
            ctx.fail(f"interventions[{i}].species", f"unknown species {sp!r}")
    params = sc.ScenarioParams(species, plants, WorldConfig(**wcfg), None, initial, spec)
    schedule = ctx.guard("", sc.ScenarioSchedule, ivs, total, record)
    return ScenarioConfig(dict(raw), grid, veg, policies, params, schedule, ctx.inputs)


def load_scenario(path, seed: int) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(read_json(path), seed, path.parent, str(path))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingConfig:
    species: str
    stages: list[StageConfig]
    hyperparams: PPOHyperparams
    hidden_size: int
    other_policies: dict
    init_policy: ActorCritic | None
    inputs: dict


def parse_training(raw: Mapping, species: str | None = None, base_dir=".", source: str = "<config>") -> TrainingConfig:
    """``{"version": 1, "species": "hare", "preset": "hare" | "stages": [...], ...}``"""
    ctx = _Ctx(source, Path(base_dir))
    _check_version(ctx, raw)
    _check_unknown(ctx, raw, {"version", "description", "species", "preset", "stages", "episodes", "max_steps",
                              "hyperparams", "hidden_size", "other_policies", "init_policy"}, "")
    species = species or ctx.get(raw, "species", "", str)
    episodes = ctx.get(raw, "episodes", "", int, 100)
    max_steps = ctx.get(raw, "max_steps", "", int, 5000)
    if "stages" in raw:
        stages = [ctx.guard(f"stages[{i}]", StageConfig.from_dict, s) for i, s in enumerate(ctx.get(raw, "stages", "", list))]
    else:
        preset = ctx.get(raw, "preset", "", str, species)
        makers = {"hare": hare_curriculum, "fox": fox_curriculum}
        if preset not in makers:
            ctx.fail("preset", f"unknown curriculum preset {preset!r}")
        stages = makers[preset](episodes, max_steps)
    if not stages:
        ctx.fail("stages", "curriculum needs at least one stage")
    hp = ctx.get(raw, "hyperparams", "", dict, {})
    _check_unknown(ctx, hp, {f.name for f in fields(PPOHyperparams)}, "hyperparams")
    hyper = ctx.guard("hyperparams", PPOHyperparams, **hp)
    init = raw.get("init_policy")
    init_policy = ctx.guard("init_policy", ActorCritic.load, ctx.path(init, "init_policy")) if init else None
    return TrainingConfig(
        species,
        stages,
        hyper,
        ctx.get(raw, "hidden_size", "", int, 128),
        _policies(ctx, ctx.get(raw, "other_policies", "", dict, {})),
        init_policy,
        ctx.inputs,
    )


def load_training(path, species: str | None = None) -> TrainingConfig:
    path = Path(path)
    return parse_training(read_json(path), species, path.parent, str(path))
