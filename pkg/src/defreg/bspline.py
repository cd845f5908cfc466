"""Cubic B-spline control grids, dense displacement fields, and warping.

A control grid with spacing ``s`` places lattice node ``l`` at pixel ``l * s``
and keeps one ring of exterior nodes on every side, so the array column for
lattice index ``l`` is ``l + 1``. The dense displacement at pixel ``x`` is the
tensor-product expansion of the centered cubic B-spline over the 4x4
surrounding coefficients. Coefficients and fields are in pixel units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .image import (
    Image2D,
    LabelMap,
    OneHotStack,
    bilinear_sample_many,
    central_gradient_raw,
    nearest_sample_many,
)

__all__ = [
    "ControlGrid",
    "DisplacementField",
    "DeformationQuality",
    "cubic_bspline",
    "make_grid",
    "densify",
    "splat_to_grid",
    "prolongate",
    "random_smooth_deformation",
    "warp_image",
    "warp_onehot",
    "warp_labels",
    "deformation_quality",
]


@dataclass
class ControlGrid:
    """B-spline coefficient lattice; coeffs has shape (rows, cols, 2)."""

    spacing_px: float
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 3 or self.coeffs.shape[2] != 2:
            raise DomainError(f"grid coeffs must be (rows, cols, 2), got {self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs)):
            raise DomainError("grid coefficients must be finite")
        if not (self.spacing_px > 0):
            raise DomainError(f"control spacing must be positive, got {self.spacing_px}")

    @property
    def rows(self) -> int:
        return self.coeffs.shape[0]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[1]


@dataclass
class DisplacementField:
    """Dense per-pixel displacement u; the deformation is y(x) = x + u(x)."""

    u: np.ndarray  # (H, W, 2), u[..., 0] along width
    spacing: float = 1.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.ndim != 3 or self.u.shape[2] != 2:
            raise DomainError(f"field must be (H, W, 2), got {self.u.shape}")
        if not np.all(np.isfinite(self.u)):
            raise DomainError("field values must be finite")

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]


@dataclass
class DeformationQuality:
    jacobian_det: np.ndarray
    folding_fraction: float


def cubic_bspline(t):
    """Centered uniform cubic B-spline basis; support [-2, 2], value 2/3 at 0."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    out = np.zeros_like(t)
    near = t < 1.0
    mid = (t >= 1.0) & (t < 2.0)
    out[near] = (4.0 - 6.0 * t[near] ** 2 + 3.0 * t[near] ** 3) / 6.0
    out[mid] = (2.0 - t[mid]) ** 3 / 6.0
    return out


def grid_shape_for(width: int, height: int, spacing_px: float):
    cols = math.ceil((width - 1) / spacing_px) + 3
    rows = math.ceil((height - 1) / spacing_px) + 3
    return rows, cols


def make_grid(width: int, height: int, spacing_px: float) -> ControlGrid:
    """Zero-coefficient grid covering a width x height pixel domain."""
    rows, cols = grid_shape_for(width, height, spacing_px)
    return ControlGrid(spacing_px, np.zeros((rows, cols, 2)))


def _check_coverage(grid: ControlGrid, width: int, height: int):
    rows, cols = grid_shape_for(width, height, grid.spacing_px)
    if grid.cols < cols or grid.rows < rows:
        raise ConfigurationError(
            f"grid {grid.rows}x{grid.cols} (spacing {grid.spacing_px}) does not cover "
            f"a {width}x{height} image (needs {rows}x{cols})"
        )


def _axis_weights(coords: np.ndarray, spacing: float, n: int):
    """4-tap basis weights and (clamped) array indices for 1D coordinates.

    Tap indices exceeding the lattice replicate the nearest edge coefficient,
    which preserves partition of unity for evaluation outside the covered box.
    """
    t = np.asarray(coords, dtype=np.float64) / spacing
    i0 = np.floor(t).astype(np.intp)
    f = t - i0
    idx = i0[:, None] + np.arange(4)[None, :]  # array index = lattice index + 1
    w = np.stack([cubic_bspline(f + 1.0), cubic_bspline(f), cubic_bspline(f - 1.0), cubic_bspline(f - 2.0)], axis=1)
    idx = np.clip(idx, 0, n - 1)
    return idx, w


def densify_at(grid: ControlGrid, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Evaluate the spline on the separable lattice xs x ys; returns (len(ys), len(xs), 2)."""
    ix, wx = _axis_weights(xs, grid.spacing_px, grid.cols)
    iy, wy = _axis_weights(ys, grid.spacing_px, grid.rows)
    # contract columns first: tmp[r, x, c] = sum_b coeffs[r, ix[x,b], c] * wx[x,b]
    tmp = np.einsum("rxbc,xb->rxc", grid.coeffs[:, ix, :], wx)
    return np.einsum("yaxc,ya->yxc", tmp[iy, :, :], wy)


def densify(grid: ControlGrid, width: int, height: int) -> DisplacementField:
    """Expand the control grid into a dense per-pixel displacement field."""
    _check_coverage(grid, width, height)
    u = densify_at(grid, np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    return DisplacementField(u)


def splat_to_grid(grad_u: np.ndarray, grid: ControlGrid) -> np.ndarray:
    """Transpose of :func:`densify`: scatter a per-pixel cotangent to coefficients."""
    h, w = grad_u.shape[:2]
    ix, wx = _axis_weights(np.arange(w, dtype=np.float64), grid.spacing_px, grid.cols)
    iy, wy = _axis_weights(np.arange(h, dtype=np.float64), grid.spacing_px, grid.rows)
    t1 = np.zeros((grid.rows, w, 2))
    for a in range(4):
        np.add.at(t1, iy[:, a], grad_u * wy[:, a, None, None])
    out_t = np.zeros((grid.cols, grid.rows, 2))
    t1t = np.ascontiguousarray(t1.transpose(1, 0, 2))
    for b in range(4):
        np.add.at(out_t, ix[:, b], t1t * wx[:, b, None, None])
    return out_t.transpose(1, 0, 2)


def prolongate(grid: ControlGrid, fine_width: int, fine_height: int,
               fine_spacing_px: float | None = None) -> ControlGrid:
    """Transfer a coarse-level grid to a level with half the pixel spacing.

    The fine coefficients are the coarse field sampled at the fine control
    point locations and doubled (pixel units halve), which reproduces the
    coarse field up to interpolation error.
    """
    if fine_spacing_px is None:
        fine_spacing_px = grid.spacing_px
    rows_f, cols_f = grid_shape_for(fine_width, fine_height, fine_spacing_px)
    # fine lattice node l sits at fine pixel l*s, i.e. coarse pixel l*s/2;
    # exterior fine nodes fall outside the coarse lattice, so evaluate through
    # a linearly extrapolated coefficient pad (exact for constant/linear fields)
    pad = 3
    ext = _extrapolate_pad(grid.coeffs, pad)
    ext_grid = ControlGrid(grid.spacing_px, ext)
    off = pad * grid.spacing_px
    xs = (np.arange(cols_f, dtype=np.float64) - 1.0) * fine_spacing_px / 2.0 + off
    ys = (np.arange(rows_f, dtype=np.float64) - 1.0) * fine_spacing_px / 2.0 + off
    return ControlGrid(fine_spacing_px, 2.0 * densify_at(ext_grid, xs, ys))


def _extrapolate_pad(coeffs: np.ndarray, pad: int) -> np.ndarray:
    """Pad a coefficient lattice by linear extrapolation along both axes."""
    out = coeffs
    for axis in (0, 1):
        out = np.moveaxis(out, axis, 0)
        first = out[0] + np.arange(pad, 0, -1)[:, None, None] * (out[0] - out[1])
        last = out[-1] + np.arange(1, pad + 1)[:, None, None] * (out[-1] - out[-2])
        out = np.concatenate([first, out, last], axis=0)
        out = np.moveaxis(out, 0, axis)
    return out


def random_smooth_deformation(width: int, height: int, magnitude_px: float,
                              seed: int, spacing_px: float = 16.0) -> ControlGrid:
    """Seeded grid with iid uniform coefficients in [-magnitude, +magnitude] per axis.

    Convexity of the B-spline weights bounds the dense displacement by the
    same magnitude.
    """
    rows, cols = grid_shape_for(width, height, spacing_px)
    rng = np.random.default_rng(seed)
    coeffs = rng.uniform(-magnitude_px, magnitude_px, size=(rows, cols, 2))
    if magnitude_px == 0:
        coeffs = np.zeros((rows, cols, 2))
    return ControlGrid(spacing_px, coeffs)


# ---------------------------------------------------------------------------
# warping


def _sample_coords(field: DisplacementField):
    h, w = field.height, field.width
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    return xx + field.u[..., 0], yy + field.u[..., 1]


def warp_image(m: Image2D, field: DisplacementField) -> Image2D:
    """Resample the moving image at x + u(x) with bilinear interpolation."""
    px, py = _sample_coords(field)
    return Image2D(bilinear_sample_many(m.data, px, py), spacing=m.spacing)


def warp_onehot(stack: OneHotStack, field: DisplacementField) -> OneHotStack:
    """Warp each channel independently with bilinear interpolation."""
    if stack.width != field.width or stack.height != field.height:
        raise DomainError("one-hot stack and field dimensions differ")
    px, py = _sample_coords(field)
    warped = np.stack([bilinear_sample_many(ch, px, py) for ch in stack.channels])
    return OneHotStack(warped, spacing=stack.spacing)


def warp_labels(lab: LabelMap, field: DisplacementField) -> LabelMap:
    """Nearest-neighbor label warp; evaluation only, never inside the loss."""
    px, py = _sample_coords(field)
    return LabelMap(nearest_sample_many(lab.labels, px, py), num_classes=lab.num_classes)


def deformation_quality(field: DisplacementField) -> DeformationQuality:
    """Per-pixel det of the deformation Jacobian and the fraction with det <= 0."""
    h, w = field.height, field.width
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    y1 = xx + field.u[..., 0]
    y2 = yy + field.u[..., 1]
    # derivatives w.r.t. pixel index: y and u are both in pixel units
    j11, j12 = central_gradient_raw(y1, 1.0)
    j21, j22 = central_gradient_raw(y2, 1.0)
    det = j11 * j22 - j12 * j21
    folding = float(np.count_nonzero(det <= 0.0)) / det.size
    return DeformationQuality(jacobian_det=det, folding_fraction=folding)
