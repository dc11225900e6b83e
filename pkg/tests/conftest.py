import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lwlm.channel import BsConfig, SceneSpec  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_scene():
    return SceneSpec(
        ue_region=(-10.0, 10.0, 5.0, 25.0),
        bs_list=[BsConfig((-10.0, 0.0), 20e6), BsConfig((10.0, 0.0), 20e6), BsConfig((0.0, -5.0), 50e6)],
        scatterers=[(-15.0, 12.0), (12.0, 30.0)],
        n_paths_max=3,
        seed=7,
        n_ant=8,
        n_subc=32,
    )


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split(".")[0].split()[-1])):
            terminalreporter.write_line(line)
