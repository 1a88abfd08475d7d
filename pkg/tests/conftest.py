import warnings

import numpy as np
import pytest

from m2r.core import BinaryMask, GridSpec, ScalarField
from m2r.distance import signed_distance_transform
from m2r.synth import primitive


@pytest.fixture(scope="session")
def disk257():
    return primitive("disk", dims=257, radius=0.25)


@pytest.fixture(scope="session")
def disk257_sdf(disk257):
    return signed_distance_transform(disk257[0])


def linear_field(grid: GridSpec, coef, offset=0.0):
    """Nodal samples of ``offset + coef . x`` (exactly reproduced by the interpolant)."""
    return ScalarField(grid, grid.node_points() @ np.asarray(coef, dtype=float) + offset)


def sdf_from_values(field: ScalarField):
    from m2r.distance import SignedDistanceField

    return SignedDistanceField(field, BinaryMask(field.grid, field.values <= 0))


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


# PASS/FAIL lines from the acceptance suite, repeated in the terminal summary
ACCEPTANCE_LINES = []


def record_acceptance(criterion, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
