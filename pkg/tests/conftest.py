import numpy as np
import pytest

import support
from hostdeepc.bench import _rest_state
from hostdeepc.params import CellParams


@pytest.fixture(scope="session")
def params() -> CellParams:
    return CellParams.default()


@pytest.fixture(scope="session")
def x_rest(params) -> np.ndarray:
    """Steady state at the data-collection rest input (u_s = A_t, u_g = A_g)."""
    return _rest_state((0.1, 1.0), 10.0, params).copy()


def pytest_terminal_summary(terminalreporter):
    if not support.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(support.ACCEPTANCE):
        ok, detail = support.ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
