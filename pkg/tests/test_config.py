import json

import numpy as np
import pytest

from ecosim.config import ConfigError, load_scenario, load_training, parse_scenario, parse_training, read_json
from ecosim.policy import ActorCritic, RandomPolicy
from ecosim.scenario import Hunting, IntroduceAnimals, RoadKill, SeaLevel
from ecosim.terrain import LandCover, generate_island, save_terrain, FLAT

BASE = {
    "version": 1,
    "terrain": {"generate": {"size": 40, "preset": "flat"}},
    "vegetation": {"counts": {"grass": 100, "dandelion": 100}},
    "policies": {"hare": "random", "fox": "random"},
    "initial": [{"species": "hare", "count": 5}],
    "total_steps": 1000,
}


def cfg(**changes):
    return {**BASE, **changes}


def test_minimal_scenario():
    c = parse_scenario(BASE, seed=3)
    assert c.grid.shape == (40, 40)
    assert len(c.vegetation) == 200
    assert isinstance(c.policies["hare"], RandomPolicy)
    assert c.params.initial == [IntroduceAnimals("hare", 5, "shoreline", 0)]
    assert c.schedule.total_steps == 1000 and c.schedule.record_interval == 100


def test_interventions_parsed():
    ivs = [
        {"kind": "road_kill", "corridor": {"rect": [18, 0, 21, 40]}, "kill_probability": [{"at_step": 0, "value": 0.5}]},
        {"kind": "hunting", "species": "hare", "cull_probability": {"evenly_spaced": [0.1, 0.4]}},
        {"kind": "sea_level", "levels": 2.0},
        {"kind": "land_cover_change", "region": {"rect": [1, 1, 5, 5]}, "cover": "cultivated", "at_step": 10},
        {"kind": "fertility_multiplier", "species": "hare", "factor": 0.5},
        {"kind": "introduce_animals", "species": "fox", "count": 5, "at_step": 500, "location": [3, 4]},
        {"kind": "pollute_water", "region": {"rect": [1, 1, 3, 3]}},
    ]
    c = parse_scenario(cfg(interventions=ivs), 0)
    kinds = [iv.kind for iv in c.schedule.interventions]
    assert kinds == [d["kind"] for d in ivs]
    road, hunt, sea = c.schedule.interventions[:3]
    assert isinstance(road, RoadKill) and road.kill_probability(0) == 0.5
    assert isinstance(hunt, Hunting) and hunt.cull_probability.points == ((0, 0.1), (500, 0.4))
    assert isinstance(sea, SeaLevel) and sea.levels(0) == 2.0
    assert c.schedule.interventions[3].cover is LandCover.CULTIVATED
    assert c.schedule.interventions[5].location == (3.0, 4.0)


@pytest.mark.parametrize(
    "changes,where",
    [
        ({"version": 2}, "version"),
        ({"total_steps": "many"}, "total_steps"),
        ({"bogus": 1}, "bogus"),
        ({"interventions": [{"kind": "meteor"}]}, "interventions[0].kind"),
        ({"interventions": [{"kind": "hunting", "species": "hare", "cull_probability": 2}]}, "interventions[0]"),
        ({"initial": [{"species": "dragon", "count": 1}]}, "species"),
        ({"policies": {"hare": 3}}, "policies.hare"),
        ({"terrain": {"generate": {"size": 40, "preset": "alpine"}}}, "terrain.generate.preset"),
    ],
)
def test_config_errors_name_location(changes, where):
    with pytest.raises(ConfigError) as exc:
        parse_scenario(cfg(**changes), 0)
    assert where in str(exc.value)


def test_json_syntax_error_has_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "version": 1,\n  "total_steps": ,\n}\n')
    with pytest.raises(ConfigError, match=r"bad.json:3:"):
        read_json(p)


def test_file_inputs_and_hash(tmp_path):
    g = generate_island(40, 1, FLAT)
    save_terrain(g, tmp_path / "alt.asc", tmp_path / "cov.asc")
    ActorCritic(5787, 4, species="hare", seed=1).save(tmp_path / "hare.npz")
    raw = cfg(terrain={"altitude": "alt.asc", "cover": "cov.asc"}, policies={"hare": "hare.npz", "fox": "random"})
    (tmp_path / "s.json").write_text(json.dumps(raw))
    a = load_scenario(tmp_path / "s.json", 0)
    assert a.grid.same_as(g)
    assert set(a.inputs) == {"alt.asc", "cov.asc", "hare.npz"}
    assert a.policies["hare"].theta.dtype == np.float32
    assert a.config_hash() == load_scenario(tmp_path / "s.json", 0).config_hash()
    ActorCritic(5787, 4, species="hare", seed=2).save(tmp_path / "hare.npz")
    assert a.config_hash() != load_scenario(tmp_path / "s.json", 0).config_hash()
    with pytest.raises(ConfigError, match="terrain.altitude"):
        parse_scenario(cfg(terrain={"altitude": "missing.asc", "cover": "cov.asc"}), 0, tmp_path)


def test_species_overrides_and_mink():
    c = parse_scenario(cfg(species={"mink": {"base": "fox", "resource_max": 6}}, policies={"hare": "random", "fox": "random", "mink": "random"}), 0)
    assert c.params.species["mink"].resource_max == 6
    assert c.params.species["mink"].diet == c.params.species["fox"].diet


def test_training_config(tmp_path):
    t = parse_training({"version": 1, "species": "fox", "episodes": 3, "max_steps": 50})
    assert [s.name for s in t.stages] == ["i", "ii", "iii", "iv"]
    assert all(s.episodes == 3 and s.max_steps == 50 for s in t.stages)
    t = parse_training({"version": 1, "stages": [{"name": "a", "island_size": 40}], "hyperparams": {"epochs": 2}}, "hare")
    assert t.stages[0].island_size == 40 and t.hyperparams.epochs == 2
    with pytest.raises(ConfigError, match="hyperparams"):
        parse_training({"version": 1, "species": "hare", "hyperparams": {"momentum": 0.9}})
    p = tmp_path / "t.json"
    p.write_text(json.dumps({"version": 1, "preset": "hare"}))
    assert len(load_training(p, "hare").stages) == 5
