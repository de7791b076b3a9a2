"""Raster habitat: altitude + land cover on a 1 m grid, plus vegetation placement.

Coordinates follow the raster convention used by ASCII grid files: a cell is
addressed as ``(x, y)`` with ``x`` the column (growing east) and ``y`` the row
(growing south, row 0 is the northern edge).  Arrays are indexed ``[y, x]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .rng import stream

MIN_SIZE = 31
CELL_SIZE = 1.0
SEA_FLOOR = -1.0


class LandCover(IntEnum):
    FIELD = 0
    FOREST = 1
    ROCK = 2
    SEA = 3
    ROAD = 4
    CULTIVATED = 5
    POLLUTED_WATER = 6
    LOGGED = 7

    @classmethod
    def parse(cls, value) -> "LandCover":
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown land cover {value!r}") from None
        return cls(int(value))


N_COVER = len(LandCover)
WATER = (LandCover.SEA, LandCover.POLLUTED_WATER)
NO_VEGETATION = (LandCover.SEA, LandCover.ROCK, LandCover.ROAD, LandCover.POLLUTED_WATER)


class TerrainFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TerrainGrid:
    """Immutable altitude/cover raster.  Edits return new grids."""

    altitude: np.ndarray
    cover: np.ndarray
    sea_level: float = 0.0
    cell_size: float = CELL_SIZE

    def __post_init__(self):
        alt = np.array(self.altitude, dtype=np.float64)
        cov = np.array(self.cover, dtype=np.int8)
        if alt.ndim != 2 or alt.shape != cov.shape:
            raise ValueError(f"dimension mismatch: altitude {alt.shape} vs cover {cov.shape}")
        h, w = alt.shape
        if w < MIN_SIZE or h < MIN_SIZE:
            raise ValueError(f"grid {w}x{h} smaller than {MIN_SIZE}x{MIN_SIZE}")
        if not np.all(np.isfinite(alt)):
            raise ValueError("altitude must be finite")
        bad = cov[(cov < 0) | (cov >= N_COVER)]
        if bad.size:
            raise ValueError(f"unknown cover code {int(bad.flat[0])}")
        if self.cell_size != CELL_SIZE:
            raise ValueError("cell size is fixed at 1 m")
        alt.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "altitude", alt)
        object.__setattr__(self, "cover", cov)
        object.__setattr__(self, "sea_level", float(self.sea_level))

    @property
    def width(self) -> int:
        return self.altitude.shape[1]

    @property
    def height(self) -> int:
        return self.altitude.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.altitude.shape

    @cached_property
    def submerged(self) -> np.ndarray:
        m = self.altitude < self.sea_level
        m.setflags(write=False)
        return m

    @cached_property
    def effective_cover(self) -> np.ndarray:
        c = np.where(self.submerged, np.int8(LandCover.SEA), self.cover).astype(np.int8)
        c.setflags(write=False)
        return c

    @cached_property
    def water(self) -> np.ndarray:
        m = np.isin(self.effective_cover, WATER)
        m.setflags(write=False)
        return m

    @cached_property
    def walkable(self) -> np.ndarray:
        m = ~self.water
        m.setflags(write=False)
        return m

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def is_sea(self, x: int, y: int) -> bool:
        """Deadly water: out-of-grid, sea cover, or below sea level."""
        if not self.in_bounds(x, y):
            return True
        return self.effective_cover[y, x] == LandCover.SEA

    def same_as(self, other: "TerrainGrid") -> bool:
        return (
            self.sea_level == other.sea_level
            and np.array_equal(self.altitude, other.altitude)
            and np.array_equal(self.cover, other.cover)
        )


@dataclass(frozen=True)
class VegetationPlacement:
    species: str
    x: int
    y: int

    @property
    def cell(self) -> tuple[int, int]:
        return (self.x, self.y)


# ---------------------------------------------------------------------------
# geometry


def slope_degrees(grid: TerrainGrid, frm: tuple[int, int], to: tuple[int, int]) -> float:
    """Signed inclination from cell ``frm`` to the 8-adjacent cell ``to``."""
    dx, dy = to[0] - frm[0], to[1] - frm[1]
    if max(abs(dx), abs(dy)) != 1:
        raise ValueError(f"cells {frm} and {to} are not adjacent")
    dist = math.hypot(dx, dy) * grid.cell_size
    dalt = grid.altitude[to[1], to[0]] - grid.altitude[frm[1], frm[0]]
    return math.degrees(math.atan(dalt / dist))


def set_sea_level(grid: TerrainGrid, level: float) -> TerrainGrid:
    return replace(grid, sea_level=float(level))


@dataclass(frozen=True)
class Rect:
    """Cells ``x0 <= x < x1``, ``y0 <= y < y1``."""

    x0: int
    y0: int
    x1: int
    y1: int

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        h, w = shape
        m = np.zeros(shape, dtype=bool)
        x0, x1 = max(self.x0, 0), min(self.x1, w)
        y0, y1 = max(self.y0, 0), min(self.y1, h)
        if x0 < x1 and y0 < y1:
            m[y0:y1, x0:x1] = True
        return m


@dataclass(frozen=True)
class Polyline:
    """Corridor of cells whose centres lie within ``width / 2`` of the path.

    ``points`` are in meters, in the same ``(x, y)`` frame as cells.
    """

    points: tuple[tuple[float, float], ...]
    width: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "points", tuple((float(a), float(b)) for a, b in self.points))
        if len(self.points) < 2:
            raise ValueError("polyline needs at least two points")

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        h, w = shape
        ys, xs = np.mgrid[0:h, 0:w]
        cx, cy = xs + 0.5, ys + 0.5
        best = np.full(shape, np.inf)
        for (ax, ay), (bx, by) in zip(self.points[:-1], self.points[1:]):
            vx, vy = bx - ax, by - ay
            seg2 = vx * vx + vy * vy
            if seg2 == 0:
                t = np.zeros(shape)
            else:
                t = np.clip(((cx - ax) * vx + (cy - ay) * vy) / seg2, 0.0, 1.0)
            d = np.hypot(cx - (ax + t * vx), cy - (ay + t * vy))
            best = np.minimum(best, d)
        return best <= self.width / 2


Region = Rect | Polyline


def region_from_dict(d: Mapping) -> Region:
    if "rect" in d:
        return Rect(*d["rect"])
    if "polyline" in d:
        return Polyline(tuple(tuple(p) for p in d["polyline"]), float(d.get("width", 1.0)))
    raise ValueError(f"region needs 'rect' or 'polyline': {dict(d)}")


def set_land_cover(grid: TerrainGrid, region, cover) -> TerrainGrid:
    """Return a copy of ``grid`` with every cell of ``region`` set to ``cover``.

    ``region`` is a :class:`Rect`, a :class:`Polyline` or a boolean mask.
    Vegetation on cells that become ineligible is the world's business
    (see ``World.sync_vegetation``).
    """
    cover = LandCover.parse(cover)
    mask = region if isinstance(region, np.ndarray) else region.mask(grid.shape)
    if not mask.any():
        raise ValueError("region does not intersect the grid")
    new = np.array(grid.cover)
    new[mask] = cover
    return replace(grid, cover=new)


# ---------------------------------------------------------------------------
# ASCII raster files


def _read_ascii_grid(path, kind: str):
    header = {}
    values = []
    with open(path) as fh:
        lines = fh.read().split("\n")
    i = 0
    while i < len(lines) and len(header) < 4:
        parts = lines[i].split()
        i += 1
        if not parts:
            continue
        key = parts[0].lower()
        if key == "nodata_value":
            key = "nodata"
        if key not in ("ncols", "nrows", "cellsize", "nodata") or len(parts) != 2:
            raise TerrainFormatError(f"{path}: bad header line {i}: {lines[i - 1]!r}")
        header[key] = parts[1]
    if set(header) != {"ncols", "nrows", "cellsize", "nodata"}:
        raise TerrainFormatError(f"{path}: incomplete header")
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        cellsize, nodata = float(header["cellsize"]), float(header["nodata"])
    except ValueError as exc:
        raise TerrainFormatError(f"{path}: bad header value ({exc})") from None
    if cellsize != CELL_SIZE:
        raise TerrainFormatError(f"{path}: cellsize must be {CELL_SIZE}, got {cellsize}")
    for lineno, line in enumerate(lines[i:], start=i + 1):
        for tok in line.split():
            if kind == "cover":
                try:
                    values.append(int(tok))
                except ValueError:
                    raise TerrainFormatError(f"{path}:{lineno}: non-integer cover code {tok!r}") from None
            else:
                try:
                    v = float(tok)
                except ValueError:
                    raise TerrainFormatError(f"{path}:{lineno}: non-numeric altitude {tok!r}") from None
                if not math.isfinite(v):
                    raise TerrainFormatError(f"{path}:{lineno}: non-numeric altitude {tok!r}")
                values.append(v)
    if len(values) != ncols * nrows:
        raise TerrainFormatError(f"{path}: expected {ncols * nrows} values, found {len(values)}")
    dtype = np.int64 if kind == "cover" else np.float64
    return np.array(values, dtype=dtype).reshape(nrows, ncols), nodata


def load_terrain(altitude_path, cover_path) -> TerrainGrid:
    """Read a ``.alt``/``.cov`` raster pair.  Altitude ``nodata`` cells become sea."""
    alt, alt_nodata = _read_ascii_grid(altitude_path, "altitude")
    cov, _ = _read_ascii_grid(cover_path, "cover")
    if alt.shape != cov.shape:
        raise TerrainFormatError(
            f"dimension mismatch: altitude {alt.shape[1]}x{alt.shape[0]}, cover {cov.shape[1]}x{cov.shape[0]}"
        )
    bad = cov[(cov < 0) | (cov >= N_COVER)]
    if bad.size:
        raise TerrainFormatError(f"unknown cover code {int(bad.flat[0])}")
    missing = alt == alt_nodata
    if missing.any():
        valid = alt[~missing]
        alt[missing] = min(valid.min(), SEA_FLOOR) if valid.size else SEA_FLOOR
        cov[missing] = LandCover.SEA
    if alt.shape[0] < MIN_SIZE or alt.shape[1] < MIN_SIZE:
        raise TerrainFormatError(f"grid {alt.shape[1]}x{alt.shape[0]} smaller than {MIN_SIZE}x{MIN_SIZE}")
    return TerrainGrid(alt, cov)


def save_terrain(grid: TerrainGrid, altitude_path, cover_path, nodata: float = -9999.0) -> None:
    header = f"ncols {grid.width}\nnrows {grid.height}\ncellsize {grid.cell_size!r}\nnodata {nodata!r}\n"
    with open(altitude_path, "w") as fh:
        fh.write(header)
        for row in grid.altitude:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    with open(cover_path, "w") as fh:
        fh.write(header)
        for row in grid.cover:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# synthetic islands


@dataclass(frozen=True)
class IslandParams:
    """Knobs for :func:`generate_island`.

    ``land_fraction`` is the share of interior cells that end up as land,
    ``roughness`` the weight of value noise against the radial falloff.
    """

    flat: bool = False
    max_altitude: float = 10.0
    roughness: float = 0.6
    land_fraction: float = 0.6
    forest_fraction: float = 0.3
    rock_fraction: float = 0.05
    max_slope: float = 30.0
    noise_scale: float = 12.0
    border: int = 1


FLAT = IslandParams(flat=True, forest_fraction=0.0, rock_fraction=0.0)
HILLY = IslandParams()


def _value_noise(rng: np.random.Generator, size: int, scale: float, octaves: int = 3) -> np.ndarray:
    out = np.zeros((size, size))
    amp, total = 1.0, 0.0
    for o in range(octaves):
        s = max(scale / (2**o), 1.0)
        n = int(math.ceil(size / s)) + 2
        lattice = rng.random((n, n))
        coords = np.arange(size) / s
        yy, xx = np.meshgrid(coords, coords, indexing="ij")
        out += amp * ndimage.map_coordinates(lattice, [yy, xx], order=1, mode="nearest")
        total += amp
        amp *= 0.5
    return out / total


def _limit_slope(alt: np.ndarray, land: np.ndarray, max_slope: float) -> np.ndarray:
    """Lower peaks until no 8-neighbour step exceeds ``max_slope`` degrees."""
    t = math.tan(math.radians(max_slope))
    a = np.where(land, alt, 0.0)
    big = np.inf
    offsets = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    for _ in range(4 * max(a.shape)):
        padded = np.pad(a, 1, constant_values=big)
        bound = np.full_like(a, big)
        for dy, dx in offsets:
            nb = padded[1 + dy : 1 + dy + a.shape[0], 1 + dx : 1 + dx + a.shape[1]]
            bound = np.minimum(bound, nb + t * math.hypot(dx, dy))
        new = np.minimum(a, bound)
        if np.array_equal(new, a):
            break
        a = new
    return a


def generate_island(size: int, rng_seed: int, params: IslandParams = HILLY) -> TerrainGrid:
    """Square ``size``x``size`` island ringed by sea; pure function of its inputs."""
    if size < MIN_SIZE:
        raise ValueError(f"island size {size} < {MIN_SIZE}")
    b = params.border
    interior = np.zeros((size, size), dtype=bool)
    interior[b : size - b, b : size - b] = True
    cover = np.full((size, size), LandCover.SEA, dtype=np.int8)
    altitude = np.full((size, size), SEA_FLOOR)
    if params.flat:
        cover[interior] = LandCover.FIELD
        altitude[interior] = 0.0
        return TerrainGrid(altitude, cover)

    rng = stream(rng_seed, "terrain")
    c = (size - 1) / 2
    ys, xs = np.mgrid[0:size, 0:size]
    d = np.hypot(xs - c, ys - c) / max(c - b, 1.0)
    h = (1.0 - d**2) + params.roughness * (_value_noise(rng, size, params.noise_scale) - 0.5) * 2
    thr = np.quantile(h[interior], 1.0 - params.land_fraction)
    land = interior & (h > thr)
    labels, n = ndimage.label(land)
    if n > 1:
        sizes = ndimage.sum(land, labels, index=range(1, n + 1))
        land = labels == (1 + int(np.argmax(sizes)))
    rel = np.clip((h - thr) / max(h[land].max() - thr, 1e-12), 0.0, 1.0)
    alt = _limit_slope(params.max_altitude * rel, land, params.max_slope)
    altitude[land] = alt[land]

    cover[land] = LandCover.FIELD
    if params.rock_fraction > 0:
        rock_score = rel + 0.3 * _value_noise(rng, size, params.noise_scale / 2, octaves=1)
        cut = np.quantile(rock_score[land], 1.0 - params.rock_fraction)
        cover[land & (rock_score > cut)] = LandCover.ROCK
    if params.forest_fraction > 0:
        forest_score = _value_noise(rng, size, params.noise_scale, octaves=2)
        open_land = land & (cover == LandCover.FIELD)
        cut = np.quantile(forest_score[open_land], 1.0 - params.forest_fraction)
        cover[open_land & (forest_score > cut)] = LandCover.FOREST
    return TerrainGrid(altitude, cover)


# ---------------------------------------------------------------------------
# vegetation

# Documented defaults; the relative weights only encode "more in fields than forests".
DEFAULT_DENSITY: dict[LandCover, dict[str, float]] = {
    LandCover.FIELD: {"grass": 1.0, "dandelion": 1.0, "tree": 0.01},
    LandCover.FOREST: {"grass": 0.3, "dandelion": 0.3, "tree": 1.0},
    LandCover.CULTIVATED: {"grass": 0.5, "dandelion": 0.2, "tree": 0.0},
    LandCover.LOGGED: {"grass": 0.6, "dandelion": 0.5, "tree": 0.0},
}

SPECIES_ORDER = ("tree", "grass", "dandelion")


def _density_grid(grid: TerrainGrid, density: Mapping, species: str) -> np.ndarray:
    weights = np.zeros(grid.shape)
    eff = grid.effective_cover
    for cover, table in density.items():
        w = float(table.get(species, 0.0))
        if w < 0:
            raise ValueError(f"negative placement weight for {species} on {LandCover.parse(cover).name}")
        weights[eff == LandCover.parse(cover)] = w
    weights[np.isin(eff, NO_VEGETATION)] = 0.0
    return weights


def place_vegetation(
    grid: TerrainGrid,
    density_table: Mapping | None,
    counts: Mapping[str, int],
    rng_seed: int,
) -> list[VegetationPlacement]:
    """Sample vegetation cells without replacement, weighted by land cover.

    Trees go first; grass and dandelions avoid tree cells (and may share a
    cell with each other).
    """
    density = DEFAULT_DENSITY if density_table is None else density_table
    order = [s for s in SPECIES_ORDER if s in counts] + sorted(set(counts) - set(SPECIES_ORDER))
    trees = np.zeros(grid.shape, dtype=bool)
    understory = np.zeros(grid.shape, dtype=bool)
    out: list[VegetationPlacement] = []
    for species in order:
        n = int(counts[species])
        if n < 0:
            raise ValueError(f"negative count for {species}")
        if n == 0:
            continue
        w = _density_grid(grid, density, species)
        w[trees] = 0.0
        if species == "tree":
            w[understory] = 0.0
        flat = w.ravel()
        eligible = int(np.count_nonzero(flat))
        if n > eligible:
            raise ValueError(f"{n} {species} requested but only {eligible} eligible cells")
        rng = stream(rng_seed, "vegetation", species)
        idx = rng.choice(flat.size, size=n, replace=False, p=flat / flat.sum())
        idx.sort()
        ys, xs = np.unravel_index(idx, grid.shape)
        if species == "tree":
            trees[ys, xs] = True
        else:
            understory[ys, xs] = True
        out.extend(VegetationPlacement(species, int(x), int(y)) for x, y in zip(xs, ys))
    return out


def save_vegetation(placements: Iterable[VegetationPlacement], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["species", "x", "y"])
        for p in placements:
            w.writerow([p.species, p.x, p.y])


def load_vegetation(path) -> list[VegetationPlacement]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["species", "x", "y"]:
            raise ValueError(f"{path}: expected header species,x,y")
        return [VegetationPlacement(r["species"], int(r["x"]), int(r["y"])) for r in reader]
