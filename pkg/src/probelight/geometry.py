"""Mirror-ball probe geometry: direction mapping, solid angles, sphere crops.

Coordinate conventions (shared by every module in this package):

  World/camera frame (right-handed):
    - +x right, +y up, +z points from the probe sphere toward the camera.
    - The camera therefore looks along -z.

  Probe / sphere images:
    - A probe image is the orthographic view of a mirror sphere. Pixel
      (u=column, v=row) has disc coordinates
          x = (u + 0.5) * 2 / res - 1,   y = 1 - (v + 0.5) * 2 / res,
      so row 0 is the top of the sphere and +y is up.
    - The surface normal at a disc point is n = (x, y, sqrt(1 - x^2 - y^2))
      and the stored direction is the reflection of the viewing ray
      (0, 0, -1) about n:
          d = (2*nz*x, 2*nz*y, 2*nz^2 - 1).
      Disc center maps to (0,0,1) (straight back at the camera); the disc
      rim maps to (0,0,-1) (directly behind the sphere).
    - This map has a constant area-to-solid-angle Jacobian of 4, so every
      pixel covers the same solid angle 4 * (2/res)^2 steradians.

  Source video frames:
    - Pixel (col, row) with row increasing downward; the camera frame has
      +x right, +y up, looking along -z, so the ray through a pixel is
      ((col - ppx) / f, (ppy - row) / f, -1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegradedInputWarning, UsageError


def disc_coords(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Disc coordinates (x, y) of every pixel center, each (res, res)."""
    c = (np.arange(resolution, dtype=np.float64) + 0.5) / resolution * 2.0 - 1.0
    x = np.broadcast_to(c[None, :], (resolution, resolution)).copy()
    y = np.broadcast_to(-c[:, None], (resolution, resolution)).copy()
    return x, y


def disc_to_direction(x: float, y: float) -> np.ndarray:
    """Reflection direction for a point inside the unit disc."""
    r2 = x * x + y * y
    if r2 > 1.0:
        raise UsageError(f"disc point ({x}, {y}) lies outside the unit disc")
    nz = np.sqrt(1.0 - r2)
    return np.array([2.0 * nz * x, 2.0 * nz * y, 2.0 * nz * nz - 1.0])


def direction_to_disc(d: np.ndarray) -> tuple[float, float]:
    """Inverse of disc_to_direction; (0,0,-1) returns the rim point (1, 0)."""
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d)
    if abs(norm - 1.0) > 1e-6:
        raise UsageError(f"direction must be unit length, |d| = {norm}")
    dz = d[2] / norm
    if dz <= -1.0 + 1e-15:
        return 1.0, 0.0
    nz = np.sqrt((dz + 1.0) / 2.0)
    return float(d[0] / (2.0 * nz)), float(d[1] / (2.0 * nz))


def disc_coverage(resolution: int, supersample: int = 4) -> np.ndarray:
    """Subpixel disc coverage per pixel via a supersample^2 grid, in [0, 1]."""
    ss = supersample
    sub = (np.arange(ss, dtype=np.float64) + 0.5) / ss  # offsets within a pixel
    base = np.arange(resolution, dtype=np.float64)
    # subsample centers along one axis, shape (res, ss)
    pos = (base[:, None] + sub[None, :]) / resolution * 2.0 - 1.0
    x = pos.reshape(1, 1, 1, resolution, ss)
    y = pos.reshape(resolution, ss, 1, 1, 1)
    inside = (x * x + y * y) < 1.0  # (res, ss, 1, res, ss)
    cov = inside.mean(axis=(1, 4))  # (res, 1, res) -> squeeze
    return cov.reshape(resolution, resolution)


@dataclass(frozen=True)
class ProbeLayout:
    """Geometry of one mirror-ball probe image.

    directions is (res, res, 3) with zeros at invalid pixels, solid_angles is
    (res, res) in steradians (0 where invalid), mask is (res, res) bool.
    valid_uv lists the (v, u) indices of valid pixels in row-major order; all
    per-direction arrays elsewhere in the package follow that order.
    """

    resolution: int
    directions: np.ndarray
    solid_angles: np.ndarray
    mask: np.ndarray
    valid_uv: np.ndarray = field(repr=False)

    @property
    def n_valid(self) -> int:
        return len(self.valid_uv)

    @property
    def valid_directions(self) -> np.ndarray:
        """(n_valid, 3) unit directions in valid_uv order."""
        return self.directions[self.mask]

    @property
    def valid_solid_angles(self) -> np.ndarray:
        """(n_valid,) steradians in valid_uv order."""
        return self.solid_angles[self.mask]

    def scatter(self, per_direction: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Place a (n_valid, ...) array back onto the (res, res, ...) grid."""
        out = np.full(
            (self.resolution, self.resolution) + per_direction.shape[1:],
            fill,
            dtype=per_direction.dtype,
        )
        out[self.mask] = per_direction
        return out

    def gather(self, grid: np.ndarray) -> np.ndarray:
        """Extract valid pixels of a (res, res, ...) grid in valid_uv order."""
        return grid[self.mask]


def build_layout(resolution: int) -> ProbeLayout:
    """Build the mirror-ball layout for a square probe of the given size.

    Per-pixel solid angle is 4 * (2/res)^2 sr, from the constant Jacobian
    of the orthographic mirror-ball map. A pixel is valid iff its center
    lies strictly inside the unit disc.
    """
    if resolution < 4 or resolution % 2 != 0:
        raise UsageError(f"probe resolution must be even and >= 4, got {resolution}")
    x, y = disc_coords(resolution)
    r2 = x * x + y * y
    mask = r2 < 1.0
    nz = np.sqrt(np.clip(1.0 - r2, 0.0, None))
    d = np.stack([2.0 * nz * x, 2.0 * nz * y, 2.0 * nz * nz - 1.0], axis=-1)
    d[~mask] = 0.0
    per_pixel = 4.0 * (2.0 / resolution) ** 2
    solid = np.where(mask, per_pixel, 0.0)
    vs, us = np.nonzero(mask)
    valid_uv = np.stack([vs, us], axis=-1)
    return ProbeLayout(
        resolution=resolution,
        directions=d,
        solid_angles=solid,
        mask=mask,
        valid_uv=valid_uv,
    )


def pixel_to_direction(u: int, v: int, layout: ProbeLayout) -> np.ndarray | None:
    """Direction of pixel (u=column, v=row), or None outside the disc."""
    res = layout.resolution
    if not (0 <= u < res and 0 <= v < res):
        raise UsageError(f"pixel index ({u}, {v}) outside {res}x{res} probe")
    if not layout.mask[v, u]:
        return None
    return layout.directions[v, u].copy()


def direction_to_pixel(d: np.ndarray, layout: ProbeLayout) -> tuple[float, float]:
    """Continuous pixel coordinates (u, v) of a unit direction.

    (0,0,-1) maps to the disc boundary; this implementation returns the
    rim point at azimuth 0.
    """
    x, y = direction_to_disc(d)
    res = layout.resolution
    u = (x + 1.0) * res / 2.0 - 0.5
    v = (1.0 - y) * res / 2.0 - 0.5
    return float(u), float(v)


@dataclass(frozen=True)
class CircleDetection:
    """An externally supplied sphere detection in a source frame.

    center is (cx, cy) in pixels, radius in pixels, focal in pixels,
    principal_point (ppx, ppy) in pixels.
    """

    center: tuple[float, float]
    radius: float
    focal: float
    principal_point: tuple[float, float]

    def validate(self, width: int, height: int) -> None:
        if self.radius <= 0:
            raise UsageError(f"detection radius must be positive, got {self.radius}")
        if self.focal <= 0:
            raise UsageError(f"focal length must be positive, got {self.focal}")
        cx, cy = self.center
        r = self.radius
        if cx - r < 0 or cy - r < 0 or cx + r > width or cy + r > height:
            warnings.warn(
                "detected circle touches the image border; crop quality degraded",
                DegradedInputWarning,
                stacklevel=3,
            )


@dataclass(frozen=True)
class SphereImage:
    """An LDR sphere crop: values (S, S, 3) in [0, 1], disc mask, rim alpha."""

    values: np.ndarray
    mask: np.ndarray
    alpha: np.ndarray

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    def flipped(self) -> "SphereImage":
        """Horizontal mirror (negates the x component of every direction)."""
        return SphereImage(
            values=self.values[:, ::-1].copy(),
            mask=self.mask[:, ::-1].copy(),
            alpha=self.alpha[:, ::-1].copy(),
        )


def _pixel_ray(col: np.ndarray, row: np.ndarray, det: CircleDetection) -> np.ndarray:
    ppx, ppy = det.principal_point
    rx = (col - ppx) / det.focal
    ry = (ppy - row) / det.focal
    return np.stack([rx, ry, -np.ones_like(rx)], axis=-1)


def _bilinear_sample(image: np.ndarray, col: np.ndarray, row: np.ndarray) -> np.ndarray:
    """Clamp-to-edge bilinear sampling at array-index coordinates.

    Index (i, j) addresses the center of pixel (i, j); callers working in
    pixel-center-at-half-integer coordinates must subtract 0.5 first.
    """
    h, w = image.shape[:2]
    c = np.clip(col, 0.0, w - 1.0)
    r = np.clip(row, 0.0, h - 1.0)
    c0 = np.floor(c).astype(np.intp)
    r0 = np.floor(r).astype(np.intp)
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    tc = (c - c0)[..., None]
    tr = (r - r0)[..., None]
    top = image[r0, c0] * (1 - tc) + image[r0, c1] * tc
    bot = image[r1, c0] * (1 - tc) + image[r1, c1] * tc
    return top * (1 - tr) + bot * tr


def resample_sphere_crop(
    image: np.ndarray, det: CircleDetection, out_resolution: int
) -> SphereImage:
    """Resample a detected sphere into a perspective-free square crop.

    Conceptually the output comes from an idealized camera aimed at the
    sphere center with a square frustum tangent to the sphere on all four
    sides. To remove perspective distortion entirely, each output pixel is
    mapped to its sphere surface point under the orthographic disc
    convention (the one used by probe layouts and rendered spheres), that
    3D point is projected through the source camera, and the source image
    is sampled bilinearly with clamp-to-edge. Surface points just past the
    perspective outline are not directly visible in the source; they pick
    up nearby rim pixels, which is the unavoidable information loss of a
    single perspective view.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    h, w = image.shape[:2]
    if out_resolution < 8:
        raise UsageError(f"output resolution must be >= 8, got {out_resolution}")
    det.validate(w, h)

    # Fit the tangent cone from rays through the detection circle: rays on a
    # cone average to its axis, and each makes the half-angle with it. This
    # stays accurate when the sphere sits well off the principal axis, where
    # the outline circle is displaced from the projected sphere center.
    cx, cy = det.center
    theta = np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)
    rim = _pixel_ray(
        cx + det.radius * np.cos(theta), cy + det.radius * np.sin(theta), det
    )
    rim /= np.linalg.norm(rim, axis=-1, keepdims=True)
    axis = rim.mean(axis=0)
    axis /= np.linalg.norm(axis)
    alpha_half = float(np.mean(np.arccos(np.clip(rim @ axis, -1.0, 1.0))))
    # place the sphere at unit distance; only the ratio R/D matters
    sphere_r = np.sin(alpha_half)

    up_ref = np.array([0.0, 1.0, 0.0])
    right = np.cross(axis, up_ref)
    right /= np.linalg.norm(right)
    up = np.cross(right, axis)

    xg, yg = disc_coords(out_resolution)
    nz = np.sqrt(np.clip(1.0 - xg * xg - yg * yg, 0.0, None))
    # outward normal in world frame; the camera-facing side has -axis weight
    normals = (
        xg[..., None] * right + yg[..., None] * up - nz[..., None] * axis
    )
    pts = axis + sphere_r * normals
    zs = -pts[..., 2]
    ppx, ppy = det.principal_point
    cols = ppx + det.focal * pts[..., 0] / zs
    rows = ppy - det.focal * pts[..., 1] / zs
    # projection is in pixel-center-at-half-integer coordinates
    values = _bilinear_sample(image, cols - 0.5, rows - 0.5)

    mask = (xg * xg + yg * yg) < 1.0
    values = np.where(mask[..., None], values, 0.0)
    alpha = disc_coverage(out_resolution)
    return SphereImage(values=values, mask=mask, alpha=alpha)


BACKGROUND_HEIGHT = 192
BACKGROUND_WIDTH = 135
_CROP_KEEP = 0.8  # keep the top 80% of each portrait frame


def _area_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Exact box-filter (area-average) resize via integral images."""

    def integral_axis(arr: np.ndarray, axis: int) -> np.ndarray:
        pad_shape = list(arr.shape)
        pad_shape[axis] = 1
        zero = np.zeros(pad_shape, dtype=np.float64)
        return np.concatenate([zero, np.cumsum(arr, axis=axis)], axis=axis)

    def sample_axis(cum: np.ndarray, axis: int, n_in: int, n_out: int) -> np.ndarray:
        edges = np.linspace(0.0, n_in, n_out + 1)
        idx = np.floor(edges).astype(np.intp)
        frac = edges - idx
        idx = np.minimum(idx, n_in)
        nxt = np.minimum(idx + 1, n_in)
        lo = np.take(cum, idx, axis=axis)
        hi = np.take(cum, nxt, axis=axis)
        shape = [1] * cum.ndim
        shape[axis] = n_out + 1
        at_edges = lo + (hi - lo) * frac.reshape(shape)
        width = n_in / n_out
        return np.diff(at_edges, axis=axis) / width

    out = sample_axis(integral_axis(image, 0), 0, image.shape[0], out_h)
    out = sample_axis(integral_axis(out, 1), 1, image.shape[1], out_w)
    return out


def crop_background(frame: np.ndarray) -> np.ndarray:
    """Crop the lower 20% of a 9:16 portrait frame and resize to 192x135.

    Accepts uint8 or float in [0, 1]; returns float64 (192, 135, 3) remapped
    to [-0.5, 0.5]. A 1080x1920 input keeps the top 1080x1536 region.
    """
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise UsageError(f"expected an (H, W, 3) frame, got shape {frame.shape}")
    h, w = frame.shape[:2]
    if w * 16 != h * 9:
        raise UsageError(f"frame must be portrait 9:16, got {w}x{h}")
    if frame.dtype == np.uint8:
        frame = frame.astype(np.float64) / 255.0
    else:
        frame = frame.astype(np.float64)
    keep = int(round(h * _CROP_KEEP))
    top = frame[:keep]
    small = _area_resize(top, BACKGROUND_HEIGHT, BACKGROUND_WIDTH)
    return small - 0.5
