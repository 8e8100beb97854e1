import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tilefuse.errors import GeometryError
from tilefuse.geometry import CanvasSpec, PatchGrid, build_grid, coverage_at, make_window


def brute_cover(grid, r, c):
    return {
        k for k, (r0, c0) in enumerate(grid.origins)
        if r0 <= r < r0 + grid.patch_h and c0 <= c < c0 + grid.patch_w
    }


@pytest.fixture
def grid96():
    return build_grid(CanvasSpec(96, 96, 3), 32, 32, 16, 16, "exact-tiling")


def test_exact_grid_origins(grid96):
    assert len(grid96) == 25
    assert grid96.row_origins == (0, 16, 32, 48, 64)
    assert grid96.col_origins == (0, 16, 32, 48, 64)
    assert grid96.origins == sorted(set(grid96.origins))


def test_canvas_equals_patch():
    g = build_grid(CanvasSpec(32, 32, 1), 32, 32, 16, 16)
    assert g.origins == [(0, 0)]


def test_clamp_last():
    g = build_grid(CanvasSpec(100, 100, 1), 32, 32, 16, 16, "clamp-last")
    assert g.row_origins[-1] == 68 and g.col_origins[-1] == 68
    assert g.row_origins[-1] + 32 == 100


def test_exact_tiling_violation():
    with pytest.raises(GeometryError, match="divisible"):
        build_grid(CanvasSpec(100, 96, 1), 32, 32, 16, 16, "exact-tiling")


@pytest.mark.parametrize("kw", [dict(h=40), dict(h=16, stride_y=17), dict(h=16, stride_y=0)])
def test_bad_geometry(kw):
    with pytest.raises(GeometryError):
        build_grid(CanvasSpec(32, 32, 1), **kw)


@pytest.mark.parametrize("p,expected", [((0, 0), {(0, 0)}), ((48, 48), {(32, 32), (32, 48), (48, 32), (48, 48)}),
                                        ((16, 0), {(0, 0), (16, 0)})])
def test_coverage_examples(grid96, p, expected):
    got = {grid96.origin(k) for k in coverage_at(grid96, p)}
    assert got == expected


def test_coverage_out_of_bounds(grid96):
    with pytest.raises(GeometryError):
        coverage_at(grid96, (96, 0))


@st.composite
def grids(draw):
    h = draw(st.integers(1, 12))
    w = draw(st.integers(1, 12))
    H = draw(st.integers(h, 30))
    W = draw(st.integers(w, 30))
    sy = draw(st.integers(1, h))
    sx = draw(st.integers(1, w))
    return build_grid(CanvasSpec(H, W, 1), h, w, sy, sx, "clamp-last")


@settings(max_examples=60, deadline=None)
@given(grids())
def test_coverage_complete_and_exact(grid):
    for r in range(grid.canvas.height):
        for c in range(grid.canvas.width):
            cover = coverage_at(grid, (r, c))
            assert cover, (r, c)
            assert cover == brute_cover(grid, r, c)


@pytest.mark.parametrize("h,s", [(32, 16), (32, 8), (24, 16), (12, 5)])
def test_interior_cover_count(h, s):
    n = 12
    H = h + s * n
    grid = build_grid(CanvasSpec(H, H, 1), h, h, s, s, "exact-tiling") if (H - h) % s == 0 else None
    per_axis = math.ceil(h / s)
    # a pixel far from every border
    mid = grid.row_origins[len(grid.row_origins) // 2] + 0
    counts = {len(coverage_at(grid, (mid + d, mid + d))) for d in range(s)}
    # interior count per axis is floor or ceil of h/s; it equals ceil exactly when s divides h
    if h % s == 0:
        assert counts == {per_axis**2}
    else:
        assert max(counts) == per_axis**2


def test_manifest_roundtrip(grid96):
    win = make_window("gaussian", 32)
    text = grid96.to_manifest(win, master_seed=7)
    assert "master_seed: 7" in text and "window: gaussian" in text
    assert PatchGrid.from_manifest(text) == grid96


def test_windows():
    g = make_window("gaussian", 32)
    assert g.sigma == 8.0
    assert g.values[16, 16] == 1.0
    assert g.values[0, 0] == pytest.approx(math.exp(-4))
    c = make_window("constant", 8, 4)
    np.testing.assert_array_equal(c.values, np.ones((8, 4)))
    r = make_window("linear-ramp", 5)
    assert np.all(r.values > 0) and r.values[2, 2] == r.values.max()
    with pytest.raises(GeometryError):
        make_window("hann", 8)
    with pytest.raises(ValueError):
        g.values[0, 0] = 3.0
