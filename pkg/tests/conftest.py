
import numpy as np
import pytest

from adaptive_margins import data_path
from adaptive_margins.config import Config
from adaptive_margins.primitives import library_from_params
from adaptive_margins.tube import MarginLUT, build_lut


@pytest.fixture(scope="session")
def cfg():
    return Config()


@pytest.fixture(scope="session")
def library(cfg):
    return library_from_params(cfg.library)


@pytest.fixture(scope="session")
def bundled_lut():
    return MarginLUT.load(data_path("lut_default.json"))


@pytest.fixture(scope="session")
def full_lut(cfg, library):
    """22 x 9 table at N_mc = 1000, seed 0; built once per session (about a minute)."""
    return build_lut(library, cfg.tube.sigma_grid, cfg.tube.epsilon, cfg.tube.n_mc, cfg.tube.seed, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def arc_xy(v, w, t):
    """Closed-form planar arc used as an independent oracle."""
    t = np.asarray(t, float)
    if w == 0:
        return np.stack([v * t, np.zeros_like(t)], -1)
    return np.stack([v / w * np.sin(w * t), v / w * (1 - np.cos(w * t))], -1)


@pytest.fixture
def arc():
    return arc_xy


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")




# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
