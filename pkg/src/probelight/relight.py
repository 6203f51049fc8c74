"""Differentiable forward model: image-based relighting, soft clip, gamma,
and the masked multi-BRDF L1 reconstruction loss with closed-form gradients
with respect to the log-space probe.

The probe Q stores log radiance; linear radiance is exp(Q), which lets a
32x32 image span the ~5 decades between indoor ambient and direct sun.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .geometry import ProbeLayout, SphereImage, disc_coverage
from .reflectance import ReflectanceField

GAMMA = 2.2
SOFT_CLIP_SHARPNESS = 40.0

# L1 residuals this small count as sitting on the kink (subgradient 0).
# Soft-clipping the already-LDR truth side shifts it by up to ~exp(-n(1-x))/n,
# so a perfect reconstruction of unclipped data leaves residuals below this
# dead zone instead of exactly zero.
L1_KINK_EPS = 1e-8

#: BRDF weights (mirror, diffuse, matte_silver) for the reconstruction loss.
DEFAULT_BRDF_WEIGHTS = (0.2, 0.6, 0.2)

LOG_SPACE = "log"
LINEAR_SPACE = "linear"


@dataclass(frozen=True)
class Probe:
    """A probe image on a mirror-ball layout, in log or linear radiance."""

    layout: ProbeLayout
    values: np.ndarray  # (res, res, 3)
    space: str

    def __post_init__(self):
        if self.space not in (LOG_SPACE, LINEAR_SPACE):
            raise UsageError(f"unknown probe space {self.space!r}")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.layout.resolution, self.layout.resolution, 3):
            raise UsageError(
                f"probe values shape {vals.shape} does not match layout "
                f"resolution {self.layout.resolution}"
            )
        valid = vals[self.layout.mask]
        if self.space == LOG_SPACE and not np.all(np.isfinite(valid)):
            raise UsageError("log-space probe has non-finite valid pixels")
        if self.space == LINEAR_SPACE and np.any(valid < 0):
            raise UsageError("linear-space probe has negative valid pixels")
        clean = np.zeros_like(vals)
        clean[self.layout.mask] = valid
        object.__setattr__(self, "values", clean)

    @property
    def valid_values(self) -> np.ndarray:
        """(n_valid, 3) values in the layout's valid_uv order."""
        return self.values[self.layout.mask]

    def to_linear(self) -> "Probe":
        if self.space == LINEAR_SPACE:
            return self
        out = np.zeros_like(self.values)
        out[self.layout.mask] = np.exp(self.valid_values)
        return Probe(self.layout, out, LINEAR_SPACE)

    def to_log(self) -> "Probe":
        if self.space == LOG_SPACE:
            return self
        valid = self.valid_values
        if np.any(valid <= 0):
            raise UsageError("cannot take log of a probe with zero radiance")
        out = np.zeros_like(self.values)
        out[self.layout.mask] = np.log(valid)
        return Probe(self.layout, out, LOG_SPACE)

    def flipped(self) -> "Probe":
        """Mirror the probe horizontally (direction x -> -x)."""
        return Probe(self.layout, self.values[:, ::-1].copy(), self.space)


@dataclass(frozen=True)
class RenderedSphere:
    """One relit sphere: pre-clip linear image plus its LDR encoding."""

    linear: np.ndarray
    ldr: np.ndarray
    mask: np.ndarray
    alpha: np.ndarray


def soft_clip(p: np.ndarray | float, n: float = SOFT_CLIP_SHARPNESS):
    """Smooth saturation at 1: 1 - log(1 + exp(-n*(p - 1))) / n.

    Evaluated in a numerically stable branch form; finite for any input,
    identity-like for p << 1 and asymptotically 1 (from below) for p >> 1.
    The two softplus terms are applied separately so the residual term
    survives cancellation (soft_clip(0) is a representable -1.06e-19, not
    a rounded 0).
    """
    t = -n * (np.asarray(p, dtype=np.float64) - 1.0)
    linear_part = 1.0 - np.maximum(t, 0.0) / n
    out = linear_part - np.log1p(np.exp(-np.abs(t))) / n
    return float(out) if np.isscalar(p) else out


def soft_clip_grad(p: np.ndarray | float, n: float = SOFT_CLIP_SHARPNESS):
    """Derivative of soft_clip: the logistic sigmoid of -n*(p - 1)."""
    z = -n * (np.asarray(p, dtype=np.float64) - 1.0)
    pos = 1.0 / (1.0 + np.exp(-np.abs(z)))
    out = np.where(z >= 0, pos, 1.0 - pos)
    return float(out) if np.isscalar(p) else out


def encode_ldr(linear: np.ndarray, gamma: float = GAMMA) -> np.ndarray:
    """Gamma-encode a (soft-clipped) linear image into [0, 1].

    Negative residue left by soft_clip near 0 is clamped before the power.
    """
    return np.clip(linear, 0.0, None) ** (1.0 / gamma)


def relight(field: ReflectanceField, probe: Probe) -> np.ndarray:
    """Linear sphere image of `field` under the log-space probe.

    Per-pixel dot product of the reflectance basis with exp(Q) over all
    valid probe directions (each channel independently).
    """
    if probe.space != LOG_SPACE:
        raise UsageError("relight expects a log-space probe")
    if probe.layout.resolution != field.layout.resolution:
        raise UsageError(
            f"probe layout {probe.layout.resolution} does not match field "
            f"layout {field.layout.resolution}"
        )
    energy = np.exp(probe.valid_values)  # (n, 3)
    s = field.sphere_resolution
    flat = field.basis.reshape(field.basis.shape[0], s * s, 3)
    out = np.einsum("ipc,ic->pc", flat, energy, optimize=True)
    return out.reshape(s, s, 3)


def render_sphere(field: ReflectanceField, probe: Probe) -> RenderedSphere:
    """Relight, soft-clip, and gamma-encode one sphere."""
    linear = relight(field, probe)
    ldr = encode_ldr(soft_clip(linear))
    s = field.sphere_resolution
    c = (np.arange(s) + 0.5) / s * 2.0 - 1.0
    x, y = np.meshgrid(c, -c)
    mask = (x * x + y * y) < 1.0
    return RenderedSphere(
        linear=linear, ldr=ldr, mask=mask, alpha=disc_coverage(s)
    )


def _check_sets(rendered_ldr, truths, weights):
    if not (len(rendered_ldr) == len(truths) == len(weights)):
        raise UsageError("rendered, truth, and weight counts must match")
    for r, t in zip(rendered_ldr, truths):
        if r.shape != t.values.shape:
            raise UsageError(
                f"rendered shape {r.shape} does not match truth {t.values.shape}"
            )


def rec_loss(
    rendered_ldr: list[np.ndarray],
    truths: list[SphereImage],
    weights=DEFAULT_BRDF_WEIGHTS,
) -> float:
    """Masked multi-BRDF L1 between rendered LDR spheres and ground truth.

    The truth side is also soft-clipped before differencing (a near-no-op
    on [0, 1] data, kept for symmetry with the rendered side). The norm is
    a mean over valid pixels and channels, so thresholds are independent
    of sphere resolution.
    """
    _check_sets(rendered_ldr, truths, weights)
    total = 0.0
    for r, t, w in zip(rendered_ldr, truths, weights):
        diff = np.abs(r - soft_clip(t.values))[t.mask]
        total += w * float(diff.mean())
    return total


def _ldr_grad_factor(linear: np.ndarray, gamma: float = GAMMA) -> np.ndarray:
    """d(encode_ldr(soft_clip(x)))/dx, zero where the clamp is active."""
    clipped = soft_clip(linear)
    pos = clipped > 0
    safe = np.where(pos, clipped, 1.0)
    return np.where(
        pos,
        (1.0 / gamma) * safe ** (1.0 / gamma - 1.0) * soft_clip_grad(linear),
        0.0,
    )


def rec_loss_and_grad(
    fields: list[ReflectanceField],
    probe: Probe,
    truths: list[SphereImage],
    weights=DEFAULT_BRDF_WEIGHTS,
) -> tuple[float, np.ndarray]:
    """Reconstruction loss and its gradient with respect to the log probe.

    Returns (loss, dL/dQ) with the gradient on the full (res, res, 3) grid;
    invalid probe pixels receive zero gradient. The L1 subgradient at zero
    residual is taken as 0.
    """
    if probe.space != LOG_SPACE:
        raise UsageError("rec_loss_and_grad expects a log-space probe")
    layout = probe.layout
    energy = np.exp(probe.valid_values)
    grad_e = np.zeros_like(energy)
    total = 0.0
    for field, truth, w in zip(fields, truths, weights):
        if field.layout.resolution != layout.resolution:
            raise UsageError("field layout does not match probe layout")
        s = field.sphere_resolution
        if truth.values.shape != (s, s, 3):
            raise UsageError("truth resolution does not match field")
        flat = field.basis.reshape(field.basis.shape[0], s * s, 3)
        linear = np.einsum("ipc,ic->pc", flat, energy, optimize=True)
        ldr = encode_ldr(soft_clip(linear)).reshape(s, s, 3)
        resid = ldr - soft_clip(truth.values)
        count = int(truth.mask.sum()) * 3
        total += w * float(np.abs(resid)[truth.mask].mean())
        sgn = np.where(np.abs(resid) <= L1_KINK_EPS, 0.0, np.sign(resid))
        sgn = sgn * truth.mask[..., None]
        back = (w / count) * sgn.reshape(s * s, 3) * _ldr_grad_factor(
            linear
        ).reshape(s * s, 3)
        grad_e += np.einsum("ipc,pc->ic", flat, back, optimize=True)
    grad_q = grad_e * energy
    return total, layout.scatter(grad_q)


def rec_loss_grad(
    fields: list[ReflectanceField],
    probe: Probe,
    truths: list[SphereImage],
    weights=DEFAULT_BRDF_WEIGHTS,
) -> np.ndarray:
    """Gradient of rec_loss with respect to the log probe Q."""
    return rec_loss_and_grad(fields, probe, truths, weights)[1]
