"""Physical relighting core: masked gain model, quadratic enhancement curve, blend.

The relighting model brightens shadowed pixels by a per-pixel gain field A:

    relit = (1 + A) * image * mask + (1 - mask) * image

so pixels outside the mask pass through untouched. The enhancement curve is
the quadratic unit-interval curve x + a * x * (1 - x) applied twice (order
two), and the final output is a convex blend of the curve image and the
de-shadowed image.

All three operations are written against plain array operators so they accept
either numpy arrays (inference, metrics) or torch tensors (inside the
differentiable solver). Masks may be H x W when images are channels-last
H x W x 3; tensor callers pass masks already broadcastable (N x 1 x H x W).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .imaging import SRGB, ImageTensor, ShadowMask

# Gain fields keep 1 + A strictly positive; the upper bound is a sanity cap.
GAIN_BOUNDS = (-0.99, 10.0)


@dataclass
class IlluminationMap:
    """H x W x 3 relighting gain field with 1 + A > 0 everywhere."""

    data: np.ndarray
    bounds: tuple = GAIN_BOUNDS

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if not np.isfinite(self.data).all():
            raise ValueError("gain field contains non-finite values")
        lo, hi = self.bounds
        if self.data.min() < lo or self.data.max() > hi:
            raise ValueError(
                f"gain values must lie in [{lo}, {hi}], "
                f"got [{self.data.min()}, {self.data.max()}]"
            )


@dataclass
class CurveParams:
    """Per-pixel (or scalar, broadcast) curve coefficients in [-1, 1]."""

    a1: float | np.ndarray
    a2: float | np.ndarray

    def __post_init__(self):
        for name, value in (("a1", self.a1), ("a2", self.a2)):
            arr = np.asarray(value, dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")
            if arr.min() < -1.0 or arr.max() > 1.0:
                raise ValueError(f"{name} must lie in [-1, 1]")


def _unwrap(x):
    if isinstance(x, (ImageTensor, ShadowMask, IlluminationMap)):
        return x.data
    return x


def _broadcast_mask(mask, image):
    # Channels-last callers pass an HxW mask for an HxWx3 image.
    if mask.ndim == image.ndim - 1:
        return mask[..., None]
    return mask


def apply_shadow_model(shadow_img, gain, mask, clamp: bool = True):
    """Relight shadowed pixels: (1 + gain) * img inside the mask, img outside.

    Outside the mask the result equals the input identically (before any
    clamping). With `clamp` the output is clipped to [0, 1].
    """
    s = _unwrap(shadow_img)
    a = _unwrap(gain)
    m = _broadcast_mask(_unwrap(mask), s)
    if getattr(a, "shape", ()) not in ((), s.shape):
        raise ShapeError(f"gain shape {a.shape} does not match image {s.shape}")
    try:
        if np.broadcast_shapes(tuple(m.shape), tuple(s.shape)) != tuple(s.shape):
            raise ValueError
    except ValueError:
        raise ShapeError(f"mask shape {m.shape} does not broadcast to image {s.shape}") from None
    out = (1.0 + a) * s * m + (1.0 - m) * s
    if clamp:
        out = out.clip(0.0, 1.0)
        if isinstance(shadow_img, ImageTensor):
            return ImageTensor(out, SRGB)
    return out


def enhance_second_order(img, params: CurveParams, clamp: bool = True):
    """Apply the order-two quadratic brightness curve.

    Each pass computes x + a * x * (1 - x), which maps [0, 1] into [0, 1]
    for any coefficient in [-1, 1]; 0 and 1 are fixed points.
    """
    x = _unwrap(img)
    a1 = _unwrap(params.a1)
    a2 = _unwrap(params.a2)
    for a in (a1, a2):
        if getattr(a, "shape", ()) not in ((), x.shape):
            raise ShapeError(f"curve params shape {a.shape} does not match image {x.shape}")
    first = x + a1 * x * (1.0 - x)
    out = first + a2 * first * (1.0 - first)
    if clamp:
        out = out.clip(0.0, 1.0)
        if isinstance(img, ImageTensor):
            return ImageTensor(out, SRGB)
    return out


def blend_final(enhanced, deshadowed, alpha: float):
    """Convex blend: alpha * enhanced + (1 - alpha) * deshadowed.

    alpha = 0 returns the de-shadowed image bit-exactly; alpha = 1 returns
    the enhanced image bit-exactly.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    e = _unwrap(enhanced)
    d = _unwrap(deshadowed)
    if e.shape != d.shape:
        raise ShapeError(f"shape mismatch: {e.shape} vs {d.shape}")
    if alpha == 0.0:
        out = d.clone() if hasattr(d, "clone") else d.copy()
    elif alpha == 1.0:
        out = e.clone() if hasattr(e, "clone") else e.copy()
    else:
        out = alpha * e + (1.0 - alpha) * d
    if isinstance(enhanced, ImageTensor) or isinstance(deshadowed, ImageTensor):
        return ImageTensor(out, SRGB)
    return out
