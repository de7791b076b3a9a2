import shutil
from pathlib import Path

import pytest

from ecosim.config import load_scenario, load_training
from ecosim.policy import ActorCritic

DEMOS = Path(__file__).resolve().parent.parent / "demos"
SCENARIOS = ["colonization", "road_kill", "hunting", "sea_level", "pollution", "invasive_mink"]


@pytest.fixture(scope="module")
def demo_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("demos")
    for f in DEMOS.glob("*.json"):
        shutil.copy(f, d)
    (d / "out").mkdir()
    ActorCritic(5787, 4, species="hare").save(d / "out" / "hare_policy.npz")
    return d


@pytest.mark.parametrize("name", SCENARIOS)
def test_demo_scenarios_parse(demo_dir, name):
    cfg = load_scenario(demo_dir / f"{name}.json", 0)
    assert cfg.schedule.total_steps == 6000 and cfg.params.initial


@pytest.mark.parametrize("name,stages", [("curriculum_hare_desk", 2), ("curriculum_hare_full", 5), ("curriculum_fox_full", 4)])
def test_demo_curricula_parse(demo_dir, name, stages):
    assert len(load_training(demo_dir / f"{name}.json").stages) == stages
