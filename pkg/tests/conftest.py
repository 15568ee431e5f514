from functools import lru_cache

import numpy as np
import pytest

from qprecon.matcore import MatrixSource, diagonal_scale, generate_test_matrix


@lru_cache(maxsize=None)
def mesh_matrix(m: int, jitter: float = 0.0, seed: int = 0):
    """Raw stencil matrix of an m x m mesh."""
    return generate_test_matrix(MatrixSource("generated-2d-pressure", (m, m), jitter=jitter, seed=seed))


@lru_cache(maxsize=None)
def scaled_mesh(m: int, jitter: float = 0.0, seed: int = 0):
    """D^-1 A for an m x m mesh."""
    return diagonal_scale(mesh_matrix(m, jitter, seed))[0]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
