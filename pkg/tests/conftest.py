import math
from pathlib import Path

import numpy as np
import pytest

from kinoplan.environment import Environment, load_environment

DATA = Path(__file__).resolve().parents[1] / "src" / "kinoplan" / "data"


@pytest.fixture(scope="session")
def narrow_env():
    return load_environment(DATA / "envs" / "narrow.json")


@pytest.fixture
def box_env():
    """10 x 10 room with one square obstacle in the middle."""
    return Environment((0, 10, 0, 10), ([[4, 4], [6, 4], [6, 6], [4, 6]],), (0.5, 0.4), "box")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_env():
    """7 x 5 m room with a short wall; about a hundred grid milestones."""
    return Environment((0, 7, 0, 5), ([[3.3, 1.4], [3.7, 1.4], [3.7, 5.0], [3.3, 5.0]],), (0.5, 0.4), "small")


@pytest.fixture(scope="session")
def small_roadmap(small_env):
    from kinoplan.controller import PoseController
    from kinoplan.dynamics import diff_drive
    from kinoplan.roadmap import RoadmapParams, build_roadmap

    return build_roadmap(small_env, PoseController(), diff_drive(), RoadmapParams())
