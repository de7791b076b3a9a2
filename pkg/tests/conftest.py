import numpy as np
import pytest

from ecosim.terrain import LandCover, TerrainGrid


def flat_grid(size=40, altitude=1.0, border=1, cover=LandCover.FIELD):
    """Square field of constant altitude ringed by ``border`` cells of sea."""
    alt = np.full((size, size), float(altitude))
    cov = np.full((size, size), int(cover), dtype=np.int8)
    if border:
        cov[:border, :] = cov[-border:, :] = LandCover.SEA
        cov[:, :border] = cov[:, -border:] = LandCover.SEA
        alt[cov == LandCover.SEA] = -1.0
    return TerrainGrid(alt, cov)


@pytest.fixture
def grid():
    return flat_grid()
