import numpy as np
import pytest

from lesionaug import (
    GRID_ORIGINS,
    ControlGrid,
    ImageBuffer,
    TpsFitError,
    derive_stream,
    elastic_warp,
    fit_tps,
    sample_control_grid,
    tps_evaluate,
    warp_with_grid,
)

from conftest import rand_image


# ---------------------------------------------------------------------------
# independent oracle: straightforward per-pixel TPS warp
# ---------------------------------------------------------------------------


def oracle_fit(src, dst):
    """Fit the classical TPS system, built with its own loops."""
    n = len(src)
    a = np.zeros((n + 3, n + 3))
    for i in range(n):
        for j in range(n):
            r2 = (src[i, 0] - src[j, 0]) ** 2 + (src[i, 1] - src[j, 1]) ** 2
            a[i, j] = r2 * np.log(r2) if r2 > 0 else 0.0
        a[i, n] = a[n, i] = 1.0
        a[i, n + 1] = a[n + 1, i] = src[i, 0]
        a[i, n + 2] = a[n + 2, i] = src[i, 1]
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = dst
    params, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    return params


def oracle_eval(src, params, point):
    n = len(src)
    out = np.zeros(2)
    for c in range(2):
        value = params[n, c] + params[n + 1, c] * point[0] + params[n + 2, c] * point[1]
        for i in range(n):
            r2 = (point[0] - src[i, 0]) ** 2 + (point[1] - src[i, 1]) ** 2
            if r2 > 0:
                value += params[i, c] * r2 * np.log(r2)
        out[c] = value
    return out


def oracle_reflect(x, n):
    if n == 1:
        return 0.0
    period = 2.0 * n
    t = (x + 0.5) % period
    if t > n:
        t = period - t
    return t - 0.5


def oracle_bilinear(pixels, x, y):
    h, w = pixels.shape[:2]
    x = oracle_reflect(x, w)
    y = oracle_reflect(y, h)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    fx, fy = x - x0, y - y0
    xs = [min(max(x0, 0), w - 1), min(max(x0 + 1, 0), w - 1)]
    ys = [min(max(y0, 0), h - 1), min(max(y0 + 1, 0), h - 1)]
    out = np.zeros(3)
    for c in range(3):
        top = pixels[ys[0], xs[0], c] * (1 - fx) + pixels[ys[0], xs[1], c] * fx
        bot = pixels[ys[1], xs[0], c] * (1 - fx) + pixels[ys[1], xs[1], c] * fx
        out[c] = top * (1 - fy) + bot * fy
    return out


def oracle_warp(pixels, destinations):
    h, w = pixels.shape[:2]
    dst = GRID_ORIGINS + (destinations - GRID_ORIGINS) * np.array([1.0, w / h])
    params = oracle_fit(GRID_ORIGINS, dst)
    out = np.zeros_like(pixels)
    work = pixels.astype(np.float64)
    for py in range(h):
        for px in range(w):
            point = ((px + 0.5) / w, (py + 0.5) / h)
            mapped = oracle_eval(GRID_ORIGINS, params, point)
            value = oracle_bilinear(work, mapped[0] * w - 0.5, mapped[1] * h - 0.5)
            out[py, px] = np.clip(np.rint(value), 0, 255)
    return out


# ---------------------------------------------------------------------------
# control grid
# ---------------------------------------------------------------------------


def test_grid_origins_are_the_unit_square_lattice():
    expected = np.array(
        [[x, y] for y in (0, 1 / 3, 2 / 3, 1) for x in (0, 1 / 3, 2 / 3, 1)]
    )
    assert np.abs(GRID_ORIGINS - expected).max() < 1e-15
    assert GRID_ORIGINS.shape == (16, 2)


def test_zero_displacement_grid_is_exact():
    grid = sample_control_grid(derive_stream(1, "g", 0, 0), max_disp=0.0)
    assert np.array_equal(grid.destinations, GRID_ORIGINS)


def test_displacement_bounds_monte_carlo():
    worst = 0.0
    for i in range(10_000):
        grid = sample_control_grid(derive_stream(4, f"g{i}", 0, 0))
        worst = max(worst, np.abs(grid.destinations - GRID_ORIGINS).max())
    assert worst <= 0.10


def test_grid_repeatable():
    a = sample_control_grid(derive_stream(8, "fix", 3, 1))
    b = sample_control_grid(derive_stream(8, "fix", 3, 1))
    assert np.array_equal(a.destinations, b.destinations)


def test_max_disp_validation():
    rng = derive_stream(0, "v", 0, 0)
    with pytest.raises(ValueError):
        sample_control_grid(rng, max_disp=1.0 / 6.0)
    with pytest.raises(ValueError):
        sample_control_grid(rng, max_disp=-0.1)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def test_identity_fit():
    model = fit_tps(GRID_ORIGINS, GRID_ORIGINS)
    assert np.abs(model.weights).max() < 1e-9
    expected_affine = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert np.abs(model.affine - expected_affine).max() < 1e-9


def test_translation_fit_against_least_squares_oracle():
    shift = np.array([0.05, -0.03])
    dst = GRID_ORIGINS + shift
    model = fit_tps(GRID_ORIGINS, dst)
    assert np.abs(model.weights).max() < 1e-9
    assert np.abs(model.affine[0] - shift).max() < 1e-9
    # independent dense least-squares fit of an affine-only model
    design = np.hstack([np.ones((16, 1)), GRID_ORIGINS])
    affine_ls, *_ = np.linalg.lstsq(design, dst, rcond=None)
    assert np.abs(model.affine - affine_ls).max() < 1e-9


def test_random_grids_interpolate_exactly():
    for i in range(100):
        grid = sample_control_grid(derive_stream(10, f"r{i}", 0, 0))
        model = fit_tps(GRID_ORIGINS, grid.destinations)
        reproduced = tps_evaluate(model, GRID_ORIGINS)
        assert np.abs(reproduced - grid.destinations).max() < 1e-9
        for column in range(2):
            w = model.weights[:, column]
            assert abs(w.sum()) < 1e-9
            assert abs((w * GRID_ORIGINS[:, 0]).sum()) < 1e-9
            assert abs((w * GRID_ORIGINS[:, 1]).sum()) < 1e-9


def test_affine_data_absorbed_by_affine_term():
    matrix = np.array([[0.9, 0.15], [-0.1, 1.05]])
    offset = np.array([0.02, -0.04])
    dst = GRID_ORIGINS @ matrix.T + offset
    model = fit_tps(GRID_ORIGINS, dst)
    assert np.abs(model.weights).max() < 1e-8


def test_far_point_evaluates_finite():
    grid = sample_control_grid(derive_stream(2, "far", 0, 0))
    model = fit_tps(GRID_ORIGINS, grid.destinations)
    value = tps_evaluate(model, np.array([100.0, -50.0]))
    assert np.isfinite(value).all()


def test_degenerate_configuration_raises():
    line = np.stack([np.linspace(0, 1, 16), np.full(16, 0.5)], axis=1)
    with pytest.raises(TpsFitError):
        fit_tps(line, line + 0.01)


def test_control_points_map_to_destinations():
    grid = sample_control_grid(derive_stream(3, "cp", 0, 0))
    model = fit_tps(GRID_ORIGINS, grid.destinations)
    for k in range(16):
        out = tps_evaluate(model, GRID_ORIGINS[k])
        assert np.abs(out - grid.destinations[k]).max() < 1e-9


# ---------------------------------------------------------------------------
# warping
# ---------------------------------------------------------------------------


def test_zero_displacement_warp_is_bit_identical():
    img = rand_image(48, 36, seed=21)
    out = elastic_warp(img, derive_stream(5, "w", 0, 0), max_disp=0.0)
    assert np.array_equal(out.pixels, img.pixels)


def test_constant_image_invariance():
    img = ImageBuffer.full(40, 40, (77, 140, 11))
    for i in range(5):
        out = elastic_warp(img, derive_stream(6, f"c{i}", 0, 0))
        assert np.array_equal(out.pixels, img.pixels)


def test_warp_preserves_dimensions_and_range():
    img = rand_image(52, 35, seed=22)
    out = elastic_warp(img, derive_stream(7, "dims", 0, 0))
    assert (out.width, out.height) == (img.width, img.height)
    assert out.pixels.dtype == np.uint8


def test_single_displaced_point_matches_dense_oracle():
    img = rand_image(24, 24, seed=23)
    destinations = GRID_ORIGINS.copy()
    destinations[5] = destinations[5] + np.array([0.05, 0.02])  # node (1/3, 1/3)
    grid = ControlGrid(destinations=destinations)
    out = warp_with_grid(img, grid).pixels
    expected = oracle_warp(img.pixels, destinations)
    assert np.abs(out.astype(int) - expected.astype(int)).max() <= 1


def test_random_grid_matches_dense_oracle():
    img = rand_image(20, 16, seed=24)
    grid = sample_control_grid(derive_stream(9, "oracle", 0, 0))
    out = warp_with_grid(img, grid).pixels
    expected = oracle_warp(img.pixels, grid.destinations)
    assert np.abs(out.astype(int) - expected.astype(int)).max() <= 1
