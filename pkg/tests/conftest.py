import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from ma_lab import analytic as an  # noqa: E402
from ma_lab.grid import GridSpec, PotentialField  # noqa: E402
from ma_lab.solver import Certificate, solve_reference  # noqa: E402

settings.register_profile(
    "lab", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("lab")

QUADRATICS = {
    "identity": np.eye(2),
    "diag(4,1/4)": np.diag([4.0, 0.25]),
    "rot30 diag(2,1/2)": an.rotated_quadratic(2.0, np.pi / 6).A,
}
RADIAL_BOX = ((0.2, 0.2), (1.2, 1.2))
# contains (0.7, 0) at its centre, keeps the cone point 0.2 away
DOUBLING_BOX = ((0.2, -0.5), (1.2, 0.5))
POGORELOV_GRID = GridSpec((-0.7, -0.7, -0.35), (0.7, 0.7, 0.35), (33, 33, 33))


def sample(ref, grid):
    return PotentialField(grid, np.asarray(ref(grid.points()), float).reshape(grid.shape))


class _Cache:
    def __init__(self):
        self.store = {}

    def get(self, key, make):
        if key not in self.store:
            self.store[key] = make()
        return self.store[key]


@pytest.fixture(scope="session")
def solved():
    """Session cache of solver runs: ``solved(kind, n)`` -> (field, report, certificate)."""
    cache = _Cache()

    def run(kind: str, n: int):
        def make():
            if kind == "radial":
                g = GridSpec(*RADIAL_BOX, (n, n))
                ref = an.radial(1.0)
            elif kind == "doubling":
                g = GridSpec(*DOUBLING_BOX, (n, n))
                ref = an.radial(1.0)
            else:
                g = GridSpec.box(-1.0, 1.0, n)
                ref = an.quadratic(QUADRATICS[kind])
            u, rep = solve_reference(ref, g)
            return u, rep, Certificate.from_report(rep), ref

        return cache.get((kind, n), make)

    return run


@pytest.fixture(scope="session")
def pogorelov_field():
    return sample(an.pogorelov(3), POGORELOV_GRID)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
