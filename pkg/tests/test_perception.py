import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import flat_grid
from ecosim.perception import (
    CHANNELS,
    DEFAULT_SPEC,
    HALF,
    OBS_SIZE,
    ObservationSpec,
    _smell_batch,
    dump_observation,
    encode_batch,
    encode_observation,
    smell_vector,
)
from ecosim.terrain import LandCover, N_COVER, TerrainGrid, VegetationPlacement
from ecosim.world import Action, World, WorldConfig, step_world

ALT, COVER, GRASS, DANDELION, OBSTACLE, ANIMAL = range(6)


def test_observation_size():
    assert OBS_SIZE == 6 * 31 * 31 + 2 * 3 + 3 + (2 + 2 * 5) == 5787
    assert ObservationSpec(cover_onehot=True).size == (5 + N_COVER) * 961 + 6 + 3 + 12
    assert ObservationSpec(history_len=3).size == 6 * 961 + 6 + 3 + 8


def test_centre_of_flat_empty_island():
    w = World(flat_grid(80, altitude=2.0))
    a = w.add_animal("hare", (40, 40))
    obs = encode_observation(w, a)
    assert obs.image.shape == (6, 31, 31)
    assert np.all(obs.image[ALT] == 0.2)
    assert np.all(obs.image[COVER] == LandCover.FIELD / 7)
    for c in (GRASS, DANDELION, OBSTACLE):
        assert not obs.image[c].any()
    expected = np.zeros((31, 31))
    expected[HALF, HALF] = 1.0
    assert np.array_equal(obs.image[ANIMAL], expected)
    assert np.array_equal(obs.smell, np.zeros((2, 3)))


def test_neighbour_north_and_fox_sign():
    w = World(flat_grid(80))
    a = w.add_animal("hare", (40, 40))
    w.add_animal("hare", (40, 37))
    w.add_animal("fox", (43, 40))
    img = encode_observation(w, a).image[ANIMAL]
    assert img[12, 15] == 1.0
    assert img[15, 18] == -1.0
    fox_view = encode_observation(w, w.animals[2]).image[ANIMAL]
    assert fox_view[HALF, HALF] == -1.0 and fox_view[15, 12] == 1.0


def test_west_edge_sea_padding():
    g = flat_grid(60, altitude=3.0)
    w = World(g)
    a = w.add_animal("hare", (2, 30))
    img = encode_observation(w, a).image
    sea = LandCover.SEA / 7
    assert np.all(img[COVER][:, :13] == sea)  # 2 grid cols west of self are sea/border, 11 more off-grid
    assert np.all(img[ALT][:, :13] == g.altitude.min() / 10)
    assert img[COVER][15, 14] == LandCover.FIELD / 7


def test_plants_and_trees_channels():
    veg = [VegetationPlacement("grass", 41, 40), VegetationPlacement("dandelion", 40, 42), VegetationPlacement("tree", 39, 39)]
    w = World(flat_grid(80), vegetation=veg)
    img = encode_observation(w, w.add_animal("hare", (40, 40))).image
    assert img[GRASS][15, 16] == 1 and img[GRASS].sum() == 1
    assert img[DANDELION][17, 15] == 1 and img[DANDELION].sum() == 1
    assert img[OBSTACLE][14, 14] == 1 and img[OBSTACLE].sum() == 1


def test_trail_fades():
    w = World(flat_grid(80))
    a = w.add_animal("hare", (40, 40), orientation=90)
    for _ in range(6):
        step_world(w, {a.id: int(Action.MOVE_FORWARD)})
    img = encode_observation(w, a).image[ANIMAL]
    # self at centre; ages 1..4 behind it (west) fade as (5 - age) / 5; age 5 is gone
    assert img[15, 15] == 1.0
    assert [img[15, 15 - k] for k in range(1, 6)] == pytest.approx([0.8, 0.6, 0.4, 0.2, 0.0])


def test_intero_and_proprio():
    w = World(flat_grid(80))
    a = w.add_animal("hare", (40, 40), orientation=90, glucose=2.5, hydration=5.0)
    obs = encode_observation(w, a)
    assert obs.intero == pytest.approx([0.5, 1.0, (math.log(3.5) + math.log(6)) / (2 * math.log(6))])
    assert obs.proprio[:2] == pytest.approx([1.0, math.cos(math.pi / 2)], abs=1e-15)
    assert not obs.proprio[2:].any()
    step_world(w, {a.id: int(Action.MOVE_FORWARD)})
    step_world(w, {a.id: int(Action.MOVE_FORWARD)})
    p = encode_observation(w, a).proprio
    assert p[2:6] == pytest.approx([-1 / 15.5, 0.0, -2 / 15.5, 0.0])


def test_channel_mask():
    spec = ObservationSpec(channel_masks={"fox": [True, True, False, False, True, True]})
    veg = [VegetationPlacement("grass", 41, 40)]
    w = World(flat_grid(80), vegetation=veg)
    h = w.add_animal("hare", (40, 40))
    f = w.add_animal("fox", (40, 41))
    x = encode_batch(w, [h.id, f.id], spec)
    imgs = x[:, : spec.image_size].reshape(2, 6, 31, 31)
    assert imgs[0, GRASS].sum() == 1 and imgs[1, GRASS].sum() == 0
    with pytest.raises(ValueError):
        encode_batch(w, [f.id], ObservationSpec(channel_masks={"fox": [True]}))


def test_onehot_cover():
    spec = ObservationSpec(cover_onehot=True)
    w = World(flat_grid(80))
    x = encode_batch(w, [w.add_animal("hare", (40, 40)).id], spec)[0]
    planes = x[: spec.image_size].reshape(spec.n_channels, 31, 31)
    assert np.all(planes[1 + LandCover.FIELD] == 1) and planes[1 : 1 + N_COVER].sum() == 961


# -- smell -----------------------------------------------------------------------


def test_smell_examples():
    w = World(flat_grid(200))
    a = w.add_animal("hare", (100, 100))
    assert smell_vector(w, a, "fox") == (0.0, 0.0, 0.0)
    w.add_animal("hare", (110, 100))
    dx, dy, m = smell_vector(w, a, "hare")
    assert (dx, dy) == (1.0, 0.0) and abs(m - 1 / 11) <= 1e-12
    w.add_animal("hare", (90, 100))
    dx, dy, m = smell_vector(w, a, "hare")
    assert m <= 1e-12 and (dx, dy) == (0.0, 0.0)


def test_smell_radius():
    w = World(flat_grid(250))
    a = w.add_animal("fox", (100, 100))
    w.add_animal("hare", (201, 100))
    assert smell_vector(w, a, "hare") == (0.0, 0.0, 0.0)
    w.add_animal("hare", (200, 100))
    assert smell_vector(w, a, "hare")[2] == pytest.approx(1 / 101)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 118), st.integers(1, 118), st.booleans()), min_size=1, max_size=25, unique_by=lambda t: t[:2]))
def test_vectorised_smell_matches_loop(cells):
    w = World(flat_grid(120))
    for x, y, fox in cells:
        w.add_animal("fox" if fox else "hare", (x, y))
    animals = list(w.animals.values())
    for target in ("hare", "fox"):
        fast = _smell_batch(w, animals, target)
        slow = np.array([smell_vector(w, a, target) for a in animals])
        assert np.allclose(fast, slow, atol=1e-12, rtol=0)


# -- invariants ------------------------------------------------------------------


def _scene(offset):
    rng = np.random.default_rng(3)
    alt = rng.uniform(0.1, 0.6, (120, 120))
    cov = rng.integers(0, 3, (120, 120))
    w = World(TerrainGrid(alt, cov), vegetation=[VegetationPlacement("grass", 60 + offset[0], 58 + offset[1])])
    me = w.add_animal("hare", (60 + offset[0], 60 + offset[1]), orientation=45)
    w.add_animal("fox", (66 + offset[0], 55 + offset[1]))
    return w, me


def test_translation_invariance():
    w0, a0 = _scene((0, 0))
    obs0 = encode_observation(w0, a0)
    w1, a1 = _scene((7, -4))
    w1.grid = TerrainGrid(np.roll(w0.grid.altitude, (-4, 7), axis=(0, 1)), np.roll(w0.grid.cover, (-4, 7), axis=(0, 1)))
    obs1 = encode_observation(w1, a1)
    assert np.array_equal(obs0.flat(), obs1.flat())


def test_moving_north_shifts_image_south():
    w, a = _scene((0, 0))
    before = encode_observation(w, a).image[GRASS]
    a.orientation = 0
    step_world(w, {a.id: int(Action.MOVE_FORWARD), 1: int(Action.STAND_STILL)})
    after = encode_observation(w, a).image[GRASS]
    assert np.array_equal(after[1:], before[:-1])


def test_encoding_is_pure():
    w, a = _scene((0, 0))
    x1 = encode_batch(w, [a.id, 1])
    x2 = encode_batch(w, [1, a.id])
    assert np.array_equal(x1[0], x2[1]) and np.all(np.isfinite(x1))
    assert x1.shape == (2, DEFAULT_SPEC.size)


def test_dump_observation(tmp_path):
    w, a = _scene((0, 0))
    files = dump_observation(encode_observation(w, a), tmp_path)
    assert len(files) == 2 * len(CHANNELS)
    pgm = (tmp_path / "obs_animal.pgm").read_text().split("\n")
    assert pgm[:3] == ["P2", "31 31", "255"]
