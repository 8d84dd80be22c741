import numpy as np
import pytest

from deadtime import BinGrid, SceneModel


@pytest.fixture
def fig2_scene():
    return SceneModel(t_r=100.0, t_d=75.0, sigma=2.0, S=3.16, B=3.16, tau=50.0)


@pytest.fixture
def small_grid_scene():
    # coarse grid keeps dense oracles cheap
    model = SceneModel(t_r=20.0, t_d=13.0, sigma=1.0, S=2.0, B=1.0, tau=7.3)
    return model, BinGrid.for_model(model, 0.5)


def rel_err(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))
