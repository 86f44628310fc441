"""Value planes the pair comparisons can address, with hand-rolled adjoints.

Three derived planes sit on top of raw pixels:

* ``luminance``: 0.299 R + 0.587 G + 0.114 B.
* ``fft_magnitude``: modulus of the unnormalized 2-D DFT. Circularly
  shifting the input only rotates phases, so the modulus is exactly
  shift-invariant.
* ``fourier_mellin``: modulus of the DFT of a log-polar resample. Rotating
  the input about the grid center becomes a circular shift along the
  angular axis of the resample, so the modulus is rotation-invariant up to
  interpolation error.

Each transform has a vector-Jacobian product (``*_vjp``) so gradient
descent can push constraints on a derived plane back to pixels. The VJPs
mirror the forward computations term by term; finite differences in the
test suite hold them to that.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import as_image

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def luminance(img: np.ndarray) -> np.ndarray:
    """Collapse (H, W, C) to a single (H, W) plane; 1-channel input passes through."""
    img = as_image(img)
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ LUMA_WEIGHTS


def luminance_vjp(img: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    img = as_image(img)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != img.shape[:2]:
        raise ValueError(f"cotangent shape {cot.shape} != plane shape {img.shape[:2]}")
    if img.shape[2] == 1:
        return cot[:, :, None].copy()
    return cot[:, :, None] * LUMA_WEIGHTS[None, None, :]


def fft_magnitude(field: np.ndarray) -> np.ndarray:
    """Modulus of the unnormalized 2-D DFT; the [0, 0] bin is the plain sum."""
    field = _as_field(field)
    return np.abs(np.fft.fft2(field))


def fft_magnitude_vjp(field: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    """Pull a gradient on the modulus back to the real input plane.

    With F = DFT(f) and unit phasor U = F/|F| the chain rule gives
    d<g, |F|>/df = Re(DFT(g * conj(U))), using that the DFT matrix is
    symmetric. Bins with zero modulus get phasor 0 (subgradient choice).
    """
    field = _as_field(field)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != field.shape:
        raise ValueError(f"cotangent shape {cot.shape} != field shape {field.shape}")
    spectrum = np.fft.fft2(field)
    mag = np.abs(spectrum)
    phasor = np.divide(spectrum, mag, out=np.zeros_like(spectrum), where=mag > 0)
    return np.real(np.fft.fft2(cot * np.conj(phasor)))


def _as_field(field: np.ndarray) -> np.ndarray:
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise ValueError(f"expected a 2-D field, got shape {field.shape}")
    return field


@dataclass(frozen=True)
class LogPolarGrid:
    """Sampling grid: log-spaced radii r_min..r_max, uniform angles on [0, 2pi)."""

    n_radial: int
    n_angular: int
    r_min: float
    r_max: float
    center: Tuple[float, float]

    def __post_init__(self):
        if self.n_radial < 2 or self.n_angular < 2:
            raise ValueError("grid needs at least 2 samples per axis")
        if not 0.0 < self.r_min < self.r_max:
            raise ValueError(f"need 0 < r_min < r_max, got ({self.r_min}, {self.r_max})")

    def sample_points(self) -> Tuple[np.ndarray, np.ndarray]:
        radii = np.geomspace(self.r_min, self.r_max, self.n_radial)
        angles = np.arange(self.n_angular) * (2.0 * np.pi / self.n_angular)
        rows = self.center[0] + radii[:, None] * np.sin(angles)[None, :]
        cols = self.center[1] + radii[:, None] * np.cos(angles)[None, :]
        return rows, cols


def default_grid(height: int, width: int) -> LogPolarGrid:
    """Grid used by the watermark pipeline: square, centered, radius to the inscribed circle."""
    side = min(height, width)
    r_max = side / 2.0 - 1.0
    if r_max <= 1.0:
        raise ValueError(f"field {height}x{width} too small for a log-polar grid")
    return LogPolarGrid(
        n_radial=side,
        n_angular=side,
        r_min=1.0,
        r_max=r_max,
        center=((height - 1) / 2.0, (width - 1) / 2.0),
    )


def _check_grid_fits(grid: LogPolarGrid, h: int, w: int) -> None:
    if grid.r_max > min(h, w) / 2.0:
        raise ValueError(f"r_max {grid.r_max} exceeds inscribed radius of {h}x{w}")
    cr, cc = grid.center
    if not (0.0 <= cr - grid.r_max and cr + grid.r_max <= h - 1):
        raise ValueError("grid rows leave the field")
    if not (0.0 <= cc - grid.r_max and cc + grid.r_max <= w - 1):
        raise ValueError("grid columns leave the field")


def _bilinear_parts(rows, cols, h, w):
    r0 = np.clip(np.floor(rows).astype(np.int64), 0, h - 2)
    c0 = np.clip(np.floor(cols).astype(np.int64), 0, w - 2)
    fr = rows - r0
    fc = cols - c0
    w00 = (1 - fr) * (1 - fc)
    w01 = (1 - fr) * fc
    w10 = fr * (1 - fc)
    w11 = fr * fc
    return r0, c0, (w00, w01, w10, w11)


def log_polar(field: np.ndarray, grid: LogPolarGrid) -> np.ndarray:
    """Bilinear resample of a 2-D field onto (n_radial, n_angular) log-polar cells."""
    field = _as_field(field)
    _check_grid_fits(grid, *field.shape)
    rows, cols = grid.sample_points()
    r0, c0, (w00, w01, w10, w11) = _bilinear_parts(rows, cols, *field.shape)
    return (
        w00 * field[r0, c0]
        + w01 * field[r0, c0 + 1]
        + w10 * field[r0 + 1, c0]
        + w11 * field[r0 + 1, c0 + 1]
    )


def log_polar_vjp(field: np.ndarray, grid: LogPolarGrid, cotangent: np.ndarray) -> np.ndarray:
    """Scatter a gradient on the resample back to the four corners of each sample."""
    field = _as_field(field)
    _check_grid_fits(grid, *field.shape)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != (grid.n_radial, grid.n_angular):
        raise ValueError(f"cotangent shape {cot.shape} != grid shape")
    rows, cols = grid.sample_points()
    r0, c0, weights = _bilinear_parts(rows, cols, *field.shape)
    grad = np.zeros_like(field)
    corners = ((r0, c0), (r0, c0 + 1), (r0 + 1, c0), (r0 + 1, c0 + 1))
    for (rr, cc), wgt in zip(corners, weights):
        np.add.at(grad, (rr, cc), cot * wgt)
    return grad


def fourier_mellin(field: np.ndarray, grid: LogPolarGrid) -> np.ndarray:
    return fft_magnitude(log_polar(field, grid))


def fourier_mellin_vjp(field: np.ndarray, grid: LogPolarGrid, cotangent: np.ndarray) -> np.ndarray:
    resampled = log_polar(field, grid)
    return log_polar_vjp(field, grid, fft_magnitude_vjp(resampled, cotangent))


def vjp(kind: str, field: np.ndarray, cotangent: np.ndarray, grid: LogPolarGrid = None):
    """Dispatch table for the adjoints; ``identity`` returns the cotangent as-is."""
    if kind == "identity":
        cot = np.asarray(cotangent, dtype=np.float64)
        if cot.shape != np.asarray(field).shape:
            raise ValueError("cotangent shape mismatch")
        return cot.copy()
    if kind == "luminance":
        return luminance_vjp(field, cotangent)
    if kind == "fft_magnitude":
        return fft_magnitude_vjp(field, cotangent)
    if kind in ("log_polar", "fourier_mellin"):
        if grid is None:
            raise ValueError(f"{kind} needs a grid")
        fn = log_polar_vjp if kind == "log_polar" else fourier_mellin_vjp
        return fn(field, grid, cotangent)
    raise ValueError(f"unknown transform {kind!r}")


def rotate_about_center(x: np.ndarray, theta_deg: float) -> np.ndarray:
    """Rotate content by theta (degrees, CCW in row/col axes) about the array center.

    Inverse-mapped bilinear warp; samples falling outside the frame repeat the
    nearest edge value. Works on 2-D fields and (H, W, C) images.
    """
    arr = np.asarray(x, dtype=np.float64)
    planes = arr[:, :, None] if arr.ndim == 2 else arr
    h, w = planes.shape[:2]
    theta = np.deg2rad(theta_deg)
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    out_r, out_c = np.meshgrid(np.arange(h) - cr, np.arange(w) - cc, indexing="ij")
    # Source position = R(-theta) applied to the output offset.
    src_r = np.cos(theta) * out_r + np.sin(theta) * out_c + cr
    src_c = -np.sin(theta) * out_r + np.cos(theta) * out_c + cc
    src_r = np.clip(src_r, 0.0, h - 1)
    src_c = np.clip(src_c, 0.0, w - 1)
    r0, c0, (w00, w01, w10, w11) = _bilinear_parts(src_r, src_c, h, w)
    out = np.empty_like(planes)
    for ch in range(planes.shape[2]):
        f = planes[:, :, ch]
        out[:, :, ch] = (
            w00 * f[r0, c0] + w01 * f[r0, c0 + 1] + w10 * f[r0 + 1, c0] + w11 * f[r0 + 1, c0 + 1]
        )
    return out[:, :, 0] if arr.ndim == 2 else out
