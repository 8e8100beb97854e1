import numpy as np
import pytest

from tilefuse.geometry import CanvasSpec, build_grid, make_window
from tilefuse.schedule import build_linear_schedule


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_setup():
    canvas = CanvasSpec(48, 64, 2)
    grid = build_grid(canvas, 16, 16, 8, 8, "exact-tiling")
    return canvas, grid, make_window("gaussian", 16), build_linear_schedule(6, 1e-3, 0.2)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def record():
    """Log one PASS/FAIL line for an acceptance criterion, then return ``ok`` for asserting."""

    def _record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
