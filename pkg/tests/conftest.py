import numpy as np
import pytest

from plainseg.data.rle import RleMask


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_mask(rng, max_side: int = 40, density: float | None = None) -> np.ndarray:
    h, w = rng.integers(1, max_side + 1, size=2)
    p = rng.random() if density is None else density
    return (rng.random((h, w)) < p).astype(np.uint8)


def random_rle_pair(rng, side: int = 24) -> tuple[RleMask, RleMask]:
    a = (rng.random((side, side)) < 0.4).astype(np.uint8)
    b = (rng.random((side, side)) < 0.4).astype(np.uint8)
    return RleMask.from_dense(a), RleMask.from_dense(b)


def random_boxes(rng, n: int, extent: float = 60.0) -> np.ndarray:
    xy = rng.random((n, 2)) * extent
    wh = rng.random((n, 2)) * extent / 2 + 0.5
    return np.concatenate([xy, xy + wh], axis=1)
