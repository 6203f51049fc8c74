"""Reflectance fields: per-BRDF stacks of basis sphere images, one per valid
probe direction. Relighting a sphere is a dot product of its field with an
environment (see relight.py).

The mirror field is exact one-hot structure scaled by measured reflectivity.
The diffuse and matte-silver fields are analytic Lambertian and normalized
Phong surrogates at the measured reflectivities of the physical spheres
(82.7% mirror, 34.5% diffuse gray, 64.4% matte silver).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, UsageError
from .geometry import ProbeLayout, build_layout, disc_coords

BRDF_MIRROR = "mirror"
BRDF_DIFFUSE = "diffuse"
BRDF_MATTE_SILVER = "matte_silver"

MIRROR_REFLECTIVITY = 0.827
DIFFUSE_ALBEDO = 0.345
MATTE_SILVER_REFLECTIVITY = 0.644
MATTE_SILVER_EXPONENT = 64

_BRDF_CODES = {BRDF_MIRROR: 0, BRDF_DIFFUSE: 1, BRDF_MATTE_SILVER: 2}
_CODE_BRDFS = {v: k for k, v in _BRDF_CODES.items()}

_MAGIC = b"RFLD"
_VERSION = 1


@dataclass(frozen=True)
class ReflectanceField:
    """basis is (n_valid_directions, S, S, 3) float32, linear radiance."""

    brdf_id: str
    reflectivity: float
    layout: ProbeLayout
    sphere_resolution: int
    basis: np.ndarray


def _check_reflectivity(value: float) -> None:
    if not (0.0 < value <= 1.0):
        raise UsageError(f"reflectivity must be in (0, 1], got {value}")


def _sphere_normals(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Outward normals (res, res, 3) of an orthographically viewed sphere."""
    x, y = disc_coords(resolution)
    r2 = x * x + y * y
    mask = r2 < 1.0
    nz = np.sqrt(np.clip(1.0 - r2, 0.0, None))
    n = np.stack([x, y, nz], axis=-1)
    n[~mask] = 0.0
    return n, mask


def mirror_basis(
    layout: ProbeLayout, reflectivity: float = MIRROR_REFLECTIVITY
) -> ReflectanceField:
    """One-hot mirror field: direction i lights up sphere pixel i only."""
    _check_reflectivity(reflectivity)
    res = layout.resolution
    n = layout.n_valid
    basis = np.zeros((n, res, res, 3), dtype=np.float32)
    vs = layout.valid_uv[:, 0]
    us = layout.valid_uv[:, 1]
    basis[np.arange(n), vs, us, :] = reflectivity
    return ReflectanceField(BRDF_MIRROR, reflectivity, layout, res, basis)


def lambertian_basis(
    layout: ProbeLayout,
    sphere_resolution: int = 32,
    albedo: float = DIFFUSE_ALBEDO,
) -> ReflectanceField:
    """Analytic diffuse field: (albedo/pi) * max(0, n.w) * solid_angle."""
    _check_reflectivity(albedo)
    if sphere_resolution < 8:
        raise UsageError(f"sphere resolution must be >= 8, got {sphere_resolution}")
    normals, mask = _sphere_normals(sphere_resolution)
    dirs = layout.valid_directions
    dw = layout.valid_solid_angles
    cos = np.clip(normals.reshape(-1, 3) @ dirs.T, 0.0, None)  # (P, n)
    per_dir = (albedo / np.pi) * cos * dw[None, :]
    per_dir[~mask.reshape(-1)] = 0.0
    basis = per_dir.T.reshape(len(dirs), sphere_resolution, sphere_resolution)
    basis = np.repeat(basis[..., None], 3, axis=-1).astype(np.float32)
    return ReflectanceField(
        BRDF_DIFFUSE, albedo, layout, sphere_resolution, basis
    )


def phong_basis(
    layout: ProbeLayout,
    sphere_resolution: int = 32,
    reflectivity: float = MATTE_SILVER_REFLECTIVITY,
    exponent: int = MATTE_SILVER_EXPONENT,
    supersample: int = 4,
) -> ReflectanceField:
    """Analytic rough-specular field with a normalized Phong lobe.

    Per pixel: reflectivity * (n+2)/(2*pi) * max(0, r.w)^n * solid_angle,
    where r is the reflection of the orthographic view ray (0,0,-1) about
    the pixel normal. The (n+2)/(2*pi) factor makes the lobe integrate to
    ~reflectivity over the sphere of incoming directions.

    The n=64 lobe is only a couple of probe pixels wide, so each probe
    pixel's contribution is integrated over a supersample x supersample
    sub-grid of directions (the child pixels of a finer mirror-ball layout,
    which are equal-area by construction) instead of point-sampled at the
    pixel center. supersample=1 gives the plain point quadrature.
    """
    _check_reflectivity(reflectivity)
    if sphere_resolution < 8:
        raise UsageError(f"sphere resolution must be >= 8, got {sphere_resolution}")
    if supersample < 1:
        raise UsageError(f"supersample must be >= 1, got {supersample}")
    normals, mask = _sphere_normals(sphere_resolution)
    nz = normals[..., 2]
    refl = np.stack(
        [
            2.0 * nz * normals[..., 0],
            2.0 * nz * normals[..., 1],
            2.0 * nz * nz - 1.0,
        ],
        axis=-1,
    )

    norm = (exponent + 2.0) / (2.0 * np.pi)
    n_parent = layout.n_valid
    per_dir = np.zeros((sphere_resolution * sphere_resolution, n_parent))
    if supersample == 1:
        cos = np.clip(refl.reshape(-1, 3) @ layout.valid_directions.T, 0.0, None)
        per_dir = cos**exponent * layout.valid_solid_angles[None, :]
    else:
        child = build_layout(layout.resolution * supersample)
        # map each child pixel onto its parent's index in valid_uv order
        parent_index = np.full((layout.resolution, layout.resolution), -1)
        parent_index[layout.mask] = np.arange(n_parent)
        owners = parent_index[
            child.valid_uv[:, 0] // supersample, child.valid_uv[:, 1] // supersample
        ]
        keep = owners >= 0  # child centers inside the disc, parent valid
        child_dirs = child.valid_directions[keep]
        child_dw = child.valid_solid_angles[keep]
        owners = owners[keep]
        cos = np.clip(refl.reshape(-1, 3) @ child_dirs.T, 0.0, None)
        contrib = cos**exponent * child_dw[None, :]
        order = np.argsort(owners, kind="stable")
        owners_sorted = owners[order]
        starts = np.searchsorted(owners_sorted, np.arange(n_parent))
        summed = np.add.reduceat(contrib[:, order], starts, axis=1)
        counts = np.bincount(owners_sorted, minlength=n_parent)
        summed[:, counts == 0] = 0.0  # reduceat artifacts for empty groups
        per_dir = summed
    per_dir = reflectivity * norm * per_dir
    per_dir[~mask.reshape(-1)] = 0.0
    basis = per_dir.T.reshape(n_parent, sphere_resolution, sphere_resolution)
    basis = np.repeat(basis[..., None], 3, axis=-1).astype(np.float32)
    return ReflectanceField(
        BRDF_MATTE_SILVER, reflectivity, layout, sphere_resolution, basis
    )


def resample_field(
    samples: list[tuple[np.ndarray, np.ndarray]],
    layout: ProbeLayout,
    lobe_exponent: int = 64,
    supersample: int = 4,
    seed: int = 0,
    brdf_id: str = BRDF_DIFFUSE,
    reflectivity: float = DIFFUSE_ALBEDO,
) -> ReflectanceField:
    """Rebin sparsely sampled basis images onto the probe's direction grid.

    Each sample is (unit direction, sphere image). A normalized Phong lobe
    evaluated at supersample^2 jittered sub-directions per probe pixel
    distributes every sample's energy over nearby probe directions; the
    weights for one sample sum to 1 over all targets, so total energy is
    preserved. Jitter is deterministic for a given seed.
    """
    if not samples:
        raise UsageError("resample_field needs at least one sample")
    sphere_res = samples[0][1].shape[0]
    for _, img in samples:
        if img.shape != samples[0][1].shape:
            raise UsageError("all sample images must share one resolution")

    rng = np.random.default_rng(seed)
    res = layout.resolution
    ss = supersample
    n_targets = layout.n_valid

    # jittered sub-directions for every valid probe pixel
    vs = layout.valid_uv[:, 0].astype(np.float64)
    us = layout.valid_uv[:, 1].astype(np.float64)
    offs = (np.arange(ss) + rng.random((n_targets, 2, ss))) / ss
    sub_u = (us[:, None] + offs[:, 0, :]) / res * 2.0 - 1.0  # (n, ss)
    sub_v = 1.0 - (vs[:, None] + offs[:, 1, :]) / res * 2.0
    x = sub_u[:, :, None]  # (n, ss, 1)
    y = sub_v[:, None, :]  # (n, 1, ss)
    r2 = x * x + y * y
    inside = r2 < 1.0
    nz = np.sqrt(np.clip(1.0 - r2, 0.0, None))
    sub_dirs = np.stack(
        np.broadcast_arrays(2.0 * nz * x, 2.0 * nz * y, 2.0 * nz * nz - 1.0),
        axis=-1,
    ).reshape(n_targets, ss * ss, 3)
    valid_sub = inside.reshape(n_targets, ss * ss)

    sample_dirs = np.stack([np.asarray(d, dtype=np.float64) for d, _ in samples])
    sample_dirs /= np.linalg.norm(sample_dirs, axis=-1, keepdims=True)

    cos = np.clip(np.einsum("nkj,sj->nks", sub_dirs, sample_dirs), 0.0, None)
    lobe = cos**lobe_exponent * valid_sub[:, :, None]
    weights = lobe.sum(axis=1) / np.maximum(valid_sub.sum(axis=1), 1)[:, None]
    col_sums = weights.sum(axis=0)
    if np.any(col_sums <= 0):
        raise UsageError("a sample direction received no lobe weight")
    weights = weights / col_sums[None, :]  # (n_targets, n_samples)

    imgs = np.stack([np.asarray(img, dtype=np.float64) for _, img in samples])
    if imgs.ndim == 3:
        imgs = np.repeat(imgs[..., None], 3, axis=-1)
    basis = np.tensordot(weights, imgs, axes=(1, 0)).astype(np.float32)
    return ReflectanceField(brdf_id, reflectivity, layout, sphere_res, basis)


def default_fields(
    layout: ProbeLayout | None = None, sphere_resolution: int = 32
) -> tuple[ReflectanceField, ReflectanceField, ReflectanceField]:
    """The (mirror, diffuse, matte_silver) fields at paper reflectivities."""
    if layout is None:
        layout = build_layout(32)
    return (
        mirror_basis(layout),
        lambertian_basis(layout, sphere_resolution),
        phong_basis(layout, sphere_resolution),
    )


def save_field(path, field: ReflectanceField) -> None:
    """Write the versioned binary dump (little-endian float32 planes)."""
    code = _BRDF_CODES.get(field.brdf_id, 255)
    n = field.basis.shape[0]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(
            struct.pack(
                "<IIfIII",
                _VERSION,
                code,
                field.reflectivity,
                field.layout.resolution,
                field.sphere_resolution,
                n,
            )
        )
        f.write(field.basis.astype("<f4").tobytes())


def load_field(path) -> ReflectanceField:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise FormatError(f"not a reflectance field file: magic {magic!r}")
        header = f.read(struct.calcsize("<IIfIII"))
        if len(header) != struct.calcsize("<IIfIII"):
            raise FormatError("truncated reflectance field header")
        version, code, reflectivity, res, sphere_res, n = struct.unpack(
            "<IIfIII", header
        )
        if version != _VERSION:
            raise FormatError(f"unsupported reflectance field version {version}")
        layout = build_layout(res)
        if n != layout.n_valid:
            raise FormatError(
                f"direction count {n} does not match layout ({layout.n_valid})"
            )
        count = n * sphere_res * sphere_res * 3
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise FormatError("truncated reflectance field data")
        basis = np.frombuffer(raw, dtype="<f4").reshape(
            n, sphere_res, sphere_res, 3
        )
    brdf = _CODE_BRDFS.get(code, "custom")
    return ReflectanceField(brdf, float(reflectivity), layout, sphere_res, basis.copy())
