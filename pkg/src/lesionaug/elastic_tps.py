"""Thin plate spline fitting and elastic image warping.

A TPS interpolant ``f(p) = a0 + ax*x + ay*y + sum_i w_i * U(|p - c_i|)``
with kernel ``U(r) = r^2 * log(r^2)`` (``U(0) = 0``) is fitted per output
coordinate by solving the classical ``[[K, P], [P^T, 0]]`` system with zero
regularization, so the model interpolates the control pairs exactly.

The elastic warp fits the backward mapping (grid origins in output space,
displaced destinations in input space) and resamples with bilinear
interpolation and symmetric edge reflection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import ImageBuffer, RngStream, bilinear_sample, to_uint8

__all__ = [
    "GRID_ORIGINS",
    "ControlGrid",
    "TpsModel",
    "TpsFitError",
    "sample_control_grid",
    "fit_tps",
    "tps_evaluate",
    "warp_with_grid",
    "elastic_warp",
]


class TpsFitError(RuntimeError):
    """Raised when the interpolation system is numerically singular."""


def _make_grid_origins() -> np.ndarray:
    ticks = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
    gy, gx = np.meshgrid(ticks, ticks, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    pts.flags.writeable = False
    return pts


#: The evenly spaced 4x4 grid over the unit square, row-major.
GRID_ORIGINS = _make_grid_origins()


@dataclass(frozen=True)
class ControlGrid:
    """Warp control points in normalized coordinates.

    Origins are the fixed 4x4 unit-square grid; destinations are the origins
    plus per-point displacements.  Both displacement components are expressed
    as fractions of the image *width*; the warp converts the vertical
    component to unit-square y using the image aspect ratio.
    """

    destinations: np.ndarray
    max_disp: float = 0.10

    def __post_init__(self):
        d = self.destinations
        if d.shape != (16, 2):
            raise ValueError(f"expected 16 destination points, got shape {d.shape}")
        if np.abs(d - GRID_ORIGINS).max() > self.max_disp + 1e-12:
            raise ValueError("displacement exceeds max_disp")
        d.flags.writeable = False

    @property
    def origins(self) -> np.ndarray:
        return GRID_ORIGINS


@dataclass(frozen=True)
class TpsModel:
    """Fitted spline: control points, radial weights and affine part."""

    control_points: np.ndarray  # (n, 2)
    weights: np.ndarray  # (n, 2), one column per output coordinate
    affine: np.ndarray  # (3, 2), rows are (a0, ax, ay)

    def __post_init__(self):
        self.control_points.flags.writeable = False
        self.weights.flags.writeable = False
        self.affine.flags.writeable = False


def sample_control_grid(rng: RngStream, max_disp: float = 0.10) -> ControlGrid:
    """Displace every grid point by U[-max_disp, +max_disp] per component."""
    if not 0.0 <= max_disp < 1.0 / 6.0:
        raise ValueError("max_disp must be in [0, 1/6) to keep grid points ordered")
    disp = rng.uniform(-max_disp, max_disp, size=(16, 2))
    return ControlGrid(destinations=GRID_ORIGINS + disp, max_disp=max_disp)


def _kernel_from_sq(r2: np.ndarray) -> np.ndarray:
    # U(r) = r^2 log(r^2), continuously extended with U(0) = 0.
    out = np.zeros_like(r2)
    nz = r2 > 0
    out[nz] = r2[nz] * np.log(r2[nz])
    return out


def _pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def fit_tps(src: np.ndarray, dst: np.ndarray) -> TpsModel:
    """Fit the interpolating spline mapping ``src`` points onto ``dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape:
        raise ValueError("src and dst must both have shape (n, 2)")
    n = src.shape[0]
    kernel = _kernel_from_sq(_pairwise_sq(src, src))
    poly = np.hstack([np.ones((n, 1)), src])
    system = np.zeros((n + 3, n + 3))
    system[:n, :n] = kernel
    system[:n, n:] = poly
    system[n:, :n] = poly.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = dst
    cond = np.linalg.cond(system)
    if not np.isfinite(cond) or 1.0 / cond < 1e-12:
        raise TpsFitError(f"degenerate control configuration (cond={cond:.3e})")
    solution = np.linalg.solve(system, rhs)
    model = TpsModel(
        control_points=src.copy(), weights=solution[:n].copy(), affine=solution[n:].copy()
    )
    residual = np.abs(tps_evaluate(model, src) - dst).max()
    if residual > 1e-9:
        raise TpsFitError(f"interpolation residual {residual:.3e} exceeds 1e-9")
    return model


def tps_evaluate(model: TpsModel, points: np.ndarray) -> np.ndarray:
    """Evaluate the spline at one point (2,) or a batch (m, 2)."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    radial = _kernel_from_sq(_pairwise_sq(pts, model.control_points))
    poly = np.hstack([np.ones((pts.shape[0], 1)), pts])
    out = radial @ model.weights + poly @ model.affine
    return out[0] if single else out


def warp_with_grid(img: ImageBuffer, grid: ControlGrid) -> ImageBuffer:
    """Warp with a given control grid (backward mapping, bilinear, reflect).

    Grid displacements are fractions of the image *width* on both axes by
    convention, so the vertical component is rescaled by the aspect ratio
    before fitting in unit-square coordinates.
    """
    w, h = img.width, img.height
    disp = grid.destinations - GRID_ORIGINS
    dst = GRID_ORIGINS + disp * np.array([1.0, w / h])
    model = fit_tps(GRID_ORIGINS, dst)

    ux = (np.arange(w, dtype=np.float64) + 0.5) / w
    uy = (np.arange(h, dtype=np.float64) + 0.5) / h
    gx, gy = np.meshgrid(ux, uy)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    mapped = tps_evaluate(model, pts)
    src_x = mapped[:, 0].reshape(h, w) * w - 0.5
    src_y = mapped[:, 1].reshape(h, w) * h - 0.5
    return ImageBuffer(to_uint8(bilinear_sample(img.pixels, src_x, src_y, reflect=True)))


def elastic_warp(img: ImageBuffer, rng: RngStream, max_disp: float = 0.10) -> ImageBuffer:
    """Warp the image with a random TPS over the 4x4 control grid.

    With zero displacement the resampling is integer-aligned and the output
    is bit-identical to the input.
    """
    return warp_with_grid(img, sample_control_grid(rng, max_disp))
