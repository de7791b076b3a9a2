from collections import Counter

import pytest

from ecosim.scenario import PopulationTimeSeries
from ecosim.stats_io import (
    EVENT_COLUMNS,
    POPULATION_COLUMNS,
    RunManifest,
    read_populations,
    write_chart,
    write_events,
    write_populations,
    write_run,
)
from ecosim.world import Event


def series(steps=(0, 100, 200), hare=(5, 9, 14), fox=(0, 2, 1), markers=(100,)):
    return PopulationTimeSeries(list(steps), {"hare": list(hare), "fox": list(fox)}, {}, Counter(), list(markers), 300)


EVENTS = [
    Event(0, "introduced", "hare", 0, "", 3.5, 4.5),
    Event(17, "death", "hare", 0, "drowned", 1.0, 2.25),
]


def test_population_csv_golden(tmp_path):
    write_populations(series(), tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text() == (
        "step,species,count\n"
        "0,fox,0\n0,hare,5\n100,fox,2\n100,hare,9\n200,fox,1\n200,hare,14\n"
    )
    back = read_populations(tmp_path / "p.csv")
    assert back.steps == [0, 100, 200] and back.counts == {"fox": [0, 2, 1], "hare": [5, 9, 14]}


def test_population_csv_rejects_bad_files(tmp_path):
    (tmp_path / "a.csv").write_text("step,count\n")
    with pytest.raises(ValueError, match="expected columns"):
        read_populations(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("step,species,count\n0,hare,x\n")
    with pytest.raises(ValueError, match=":2:"):
        read_populations(tmp_path / "b.csv")


def test_event_csv_golden(tmp_path):
    write_events(EVENTS, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == (
        "step,event_type,species,id,cause,x,y\n"
        "0,introduced,hare,0,,3.500000,4.500000\n"
        "17,death,hare,0,drowned,1.000000,2.250000\n"
    )
    assert POPULATION_COLUMNS == ("step", "species", "count") and len(EVENT_COLUMNS) == 7


def test_manifest_lists_every_output(tmp_path):
    man = write_run(tmp_path, series(), EVENTS, "abc123", 7, 300)
    files = {p.name for p in tmp_path.iterdir()} - {"manifest.json"}
    assert set(man.outputs) == files == {"populations.csv", "events.csv"}
    back = RunManifest.read(tmp_path / "manifest.json")
    assert back == man and back.seed == 7 and back.config_hash == "abc123" and back.markers == [100]
    assert back.verify(tmp_path) == []
    (tmp_path / "events.csv").write_text("tampered\n")
    assert back.verify(tmp_path) == ["events.csv"]


def test_chart_two_species(tmp_path):
    write_chart(series(), tmp_path / "c.svg", title="Colonisation")
    svg = (tmp_path / "c.svg").read_text()
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count("<polyline") == 2
    assert ">hare<" in svg and ">fox<" in svg and "Colonisation" in svg
    assert svg.count('class="marker"') == 1


def test_chart_single_sample_and_determinism(tmp_path):
    one = series(steps=(0,), hare=(5,), fox=(0,), markers=())
    write_chart(one, tmp_path / "a.svg")
    write_chart(one, tmp_path / "b.svg")
    a = (tmp_path / "a.svg").read_bytes()
    assert a == (tmp_path / "b.svg").read_bytes()
    assert b"<circle" in a and b"nan" not in a
    with pytest.raises(ValueError):
        write_chart(PopulationTimeSeries(), tmp_path / "c.svg")


def test_chart_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        write_chart(series(), tmp_path / "missing" / "dir" / "c.svg")
