"""Sensory encoding: a north-up local image plus smell, interoception and
proprioception, flattened into the policy's input vector."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .terrain import N_COVER, LandCover
from .world import AnimalState, World, utility_of

VIEW = 31
HALF = VIEW // 2
SMELL_RADIUS = 100.0
ALTITUDE_SCALE = 10.0
HISTORY_SCALE = 15.5
CHANNELS = ("altitude", "cover", "grass", "dandelion", "obstacle", "animal")


@dataclass(frozen=True)
class ObservationSpec:
    """Layout options shared by encoder and policy input size."""

    history_len: int = 5
    cover_onehot: bool = False
    channel_masks: Mapping[str, Sequence[bool]] = field(default_factory=dict)
    smell_species: tuple[str, str] = ("hare", "fox")

    @property
    def n_channels(self) -> int:
        return len(CHANNELS) - 1 + (N_COVER if self.cover_onehot else 1)

    @property
    def image_size(self) -> int:
        return self.n_channels * VIEW * VIEW

    @property
    def size(self) -> int:
        return self.image_size + 2 * 3 + 3 + 2 + 2 * self.history_len


DEFAULT_SPEC = ObservationSpec()
OBS_SIZE = DEFAULT_SPEC.size


@dataclass
class Observation:
    image: np.ndarray  # (channels, 31, 31), row 0 = north
    smell: np.ndarray  # (2, 3): (dir_x, dir_y, magnitude) per smelled species
    intero: np.ndarray  # (3,)
    proprio: np.ndarray  # (2 + 2K,)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.image.ravel(), self.smell.ravel(), self.intero, self.proprio])


def _sign(world: World, species: str) -> float:
    """+1 for plant eaters, -1 for animal eaters."""
    diet = world.species_params[species].diet
    return -1.0 if diet & set(world.species_params) else 1.0


def smell_vector(world: World, animal: AnimalState, target_species: str) -> tuple[float, float, float]:
    """Sum of unit vectors toward each target within 100 m, weighted 1/(1+d)."""
    sx, sy = animal.position
    vx = vy = 0.0
    for other in world.animals.values():
        if other.id == animal.id or other.species != target_species:
            continue
        dx, dy = other.position[0] - sx, other.position[1] - sy
        d = math.hypot(dx, dy)
        if d == 0.0 or d > SMELL_RADIUS:
            continue
        w = 1.0 / (1.0 + d)
        vx += dx / d * w
        vy += dy / d * w
    mag = math.hypot(vx, vy)
    if mag == 0.0:
        return (0.0, 0.0, 0.0)
    return (vx / mag, vy / mag, mag)


def _smell_batch(world: World, animals: Sequence[AnimalState], target: str) -> np.ndarray:
    out = np.zeros((len(animals), 3))
    targets = [a for a in world.animals.values() if a.species == target]
    if not targets or not animals:
        return out
    tp = np.array([a.position for a in targets])
    tid = np.array([a.id for a in targets])
    sp = np.array([a.position for a in animals])
    sid = np.array([a.id for a in animals])
    dx = tp[None, :, 0] - sp[:, None, 0]
    dy = tp[None, :, 1] - sp[:, None, 1]
    d = np.hypot(dx, dy)
    use = (d > 0) & (d <= SMELL_RADIUS) & (tid[None, :] != sid[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(use, 1.0 / (d * (1.0 + d)), 0.0)
    vx = (dx * w).sum(axis=1)
    vy = (dy * w).sum(axis=1)
    mag = np.hypot(vx, vy)
    nz = mag > 0
    out[nz, 0] = vx[nz] / mag[nz]
    out[nz, 1] = vy[nz] / mag[nz]
    out[nz, 2] = mag[nz]
    return out


def _static_planes(world: World, spec: ObservationSpec) -> list[np.ndarray]:
    grid = world.grid
    eff = np.array(grid.effective_cover)
    eff[world.polluted & ~grid.water] = LandCover.POLLUTED_WATER
    planes = [grid.altitude / ALTITUDE_SCALE]
    if spec.cover_onehot:
        planes.extend((eff == c).astype(float) for c in range(N_COVER))
    else:
        planes.append(eff / (N_COVER - 1))
    return planes


class _Layers:
    """Padded full-map channel stack for one world snapshot."""

    def __init__(self, world: World, spec: ObservationSpec):
        grid = world.grid
        h, w = grid.shape
        key = (spec.cover_onehot, grid.sea_level, hash(world.trees.tobytes()), hash(world.polluted.tobytes()))
        cache = getattr(world, "_perception_cache", None)
        if cache is not None and cache[0] is grid and cache[1] == key:
            self.padded = cache[2]
        else:
            n_static = spec.n_channels - 4
            self.padded = np.zeros((spec.n_channels, h + 2 * HALF, w + 2 * HALF))
            pad_vals = [grid.altitude.min() / ALTITUDE_SCALE]
            if spec.cover_onehot:
                pad_vals.extend(1.0 if c == LandCover.SEA else 0.0 for c in range(N_COVER))
            else:
                pad_vals.append(LandCover.SEA / (N_COVER - 1))
            for c, v in enumerate(pad_vals):
                self.padded[c] = v
            inner = self.padded[:, HALF : HALF + h, HALF : HALF + w]
            inner[:n_static] = _static_planes(world, spec)
            inner[n_static + 2] = world.trees
            world._perception_cache = (grid, key, self.padded)
        inner = self.padded[:, HALF : HALF + h, HALF : HALF + w]
        n_static = spec.n_channels - 4
        inner[n_static] = world.layer("grass")
        inner[n_static + 1] = world.layer("dandelion")
        animal = inner[n_static + 3]
        animal[:] = 0.0
        k = spec.history_len
        for age in range(k - 1, 0, -1):
            for a in world.animals.values():
                hist = a.position_history
                if len(hist) >= age:
                    hx, hy = hist[-age]
                    cx, cy = int(math.floor(hx)), int(math.floor(hy))
                    if 0 <= cx < w and 0 <= cy < h:
                        animal[cy, cx] = _sign(world, a.species) * (k - age) / k
        for a in world.animals.values():
            cx, cy = a.cell
            animal[cy, cx] = _sign(world, a.species)
        self.animal_channel = spec.n_channels - 1


def _channel_mask(spec: ObservationSpec, species: str) -> np.ndarray | None:
    m = spec.channel_masks.get(species)
    if m is None:
        return None
    m = np.asarray(m, dtype=bool)
    if m.shape != (len(CHANNELS),):
        raise ValueError(f"channel mask for {species} needs {len(CHANNELS)} entries")
    if spec.cover_onehot:
        m = np.concatenate([m[:1], np.repeat(m[1], N_COVER), m[2:]])
    return m


def encode_batch(world: World, ids: Sequence[int], spec: ObservationSpec = DEFAULT_SPEC) -> np.ndarray:
    """Flat observations for ``ids`` against the current (pre-step) snapshot."""
    animals = [world.animals[i] for i in ids]
    n = len(animals)
    out = np.zeros((n, spec.size))
    if n == 0:
        return out
    layers = _Layers(world, spec)
    img = out[:, : spec.image_size].reshape(n, spec.n_channels, VIEW, VIEW)
    for j, a in enumerate(animals):
        cx, cy = a.cell
        img[j] = layers.padded[:, cy : cy + VIEW, cx : cx + VIEW]
        img[j, layers.animal_channel, HALF, HALF] = _sign(world, a.species)
        mask = _channel_mask(spec, a.species)
        if mask is not None:
            img[j, ~mask] = 0.0
    off = spec.image_size
    for target in spec.smell_species:
        out[:, off : off + 3] = _smell_batch(world, animals, target)
        off += 3
    k = spec.history_len
    for j, a in enumerate(animals):
        sp = world.species_params[a.species]
        rmax = sp.resource_max
        out[j, off : off + 3] = (
            a.glucose / rmax,
            a.hydration / rmax,
            utility_of(a.glucose, a.hydration) / (2 * math.log1p(rmax)),
        )
        p = off + 3
        th = math.radians(a.orientation)
        out[j, p] = math.sin(th)
        out[j, p + 1] = math.cos(th)
        hist = a.position_history[-k:]
        for m, (hx, hy) in enumerate(reversed(hist)):
            out[j, p + 2 + 2 * m] = (hx - a.position[0]) / HISTORY_SCALE
            out[j, p + 3 + 2 * m] = (hy - a.position[1]) / HISTORY_SCALE
    return out


def split(flat: np.ndarray, spec: ObservationSpec = DEFAULT_SPEC) -> Observation:
    off = spec.image_size
    return Observation(
        image=flat[:off].reshape(spec.n_channels, VIEW, VIEW),
        smell=flat[off : off + 6].reshape(2, 3),
        intero=flat[off + 6 : off + 9],
        proprio=flat[off + 9 :],
    )


def encode_observation(world: World, animal: AnimalState, spec: ObservationSpec = DEFAULT_SPEC) -> Observation:
    return split(encode_batch(world, [animal.id], spec)[0], spec)


def dump_observation(obs: Observation, out_dir, prefix: str = "obs") -> list[Path]:
    """Write each image channel as an ASCII PGM (and CSV) for eyeballing."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    names = list(CHANNELS) if obs.image.shape[0] == len(CHANNELS) else [f"ch{i}" for i in range(obs.image.shape[0])]
    for name, plane in zip(names, obs.image):
        lo, hi = float(plane.min()), float(plane.max())
        scaled = np.zeros_like(plane) if hi == lo else (plane - lo) / (hi - lo)
        pix = np.round(scaled * 255).astype(int)
        pgm = out_dir / f"{prefix}_{name}.pgm"
        with open(pgm, "w") as fh:
            fh.write(f"P2\n{VIEW} {VIEW}\n255\n")
            for row in pix:
                fh.write(" ".join(str(v) for v in row) + "\n")
        csv_path = out_dir / f"{prefix}_{name}.csv"
        np.savetxt(csv_path, plane, delimiter=",", fmt="%.6g")
        written += [pgm, csv_path]
    return written
