"""
Pytest configuration and shared fixtures.
"""
import json
import math

import numpy as np
import pytest
from httpx import AsyncClient, ASGITransport

from src.api.main import app
from src.core.entities.grid import TimeGrid
from src.core.entities.utility import UtilitySpec
from src.core.use_cases.house_selling import build_house_model
from src.core.use_cases.model_core import build_problem, validate_model

# Two-state logarithmic example: the low state waits until t = 9.9.
LOG_G = [10.0, (math.exp(10) + 99) / 10]
LOG_Q = [[-1.0, 1.0], [1.0, -1.0]]


@pytest.fixture
async def client():
    """Async HTTP client for testing FastAPI endpoints."""
    transport = ASGITransport(app=app)
    async with AsyncClient(transport=transport, base_url="http://test") as ac:
        yield ac


@pytest.fixture
def log_model():
    return validate_model(LOG_Q, LOG_G, 1.0)


@pytest.fixture
def log_problem(log_model):
    return build_problem(log_model, UtilitySpec.logarithmic())


@pytest.fixture
def log_grid():
    return TimeGrid(t_max=10.0, dt=5e-3)


@pytest.fixture
def exp_model():
    """W = (-2/e, -1/e) for gamma = c = 1; only state 1 stops."""
    return validate_model([[-2.0, 2.0], [2.0, -2.0]], [0.0, 1.0], 1.0)


@pytest.fixture
def exp3_model():
    """Same layout with rate 3: the payoff of waiting for one jump has finite variance."""
    return validate_model([[-3.0, 3.0], [3.0, -3.0]], [0.0, 1.0], 1.0)


@pytest.fixture
def house():
    return build_house_model([1.0] * 5, 0.2)


@pytest.fixture
def random_model():
    """Factory: random full generator with rates in [lo, hi] and rewards in [0, 3]."""
    def make(m: int, seed: int, lo: float = 0.5, hi: float = 4.0, c: float = 1.0):
        rng = np.random.default_rng(seed)
        Q = rng.uniform(lo, hi, size=(m, m)) / (m - 1)
        np.fill_diagonal(Q, 0.0)
        np.fill_diagonal(Q, -Q.sum(axis=1))
        g = rng.uniform(0.0, 3.0, size=m)
        return validate_model(Q, g, c)
    return make


@pytest.fixture
def log_config():
    return {
        "schema": 1,
        "states": ["low", "high"],
        "Q": LOG_Q,
        "g": LOG_G,
        "c": 1.0,
        "utility": {"family": "logarithmic"},
        "grid": {"t_max": 10.0, "dt": 5e-3},
        "threads": 1,
    }


@pytest.fixture
def exp_config():
    return {
        "schema": 1,
        "Q": [[-3.0, 3.0], [3.0, -3.0]],
        "g": [0.0, 1.0],
        "c": 1.0,
        "utility": {"family": "exponential", "gamma": 1.0},
        "grid": {"t_max": 2.0, "dt": 1e-2},
        "simulation": {"n_paths": 20000, "tail_paths": 5000, "n_list": [1, 2, 4, 8]},
        "threads": 1,
    }


@pytest.fixture
def write_config(tmp_path):
    def write(doc, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return path
    return write
