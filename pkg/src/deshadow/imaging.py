"""Image and mask primitives: PNG I/O, resizing, sRGB->LAB, dilation.

Images are H x W x 3 float64 arrays. The `ImageTensor` wrapper tracks which
color space the values live in so downstream math cannot silently mix
sRGB-encoded values with LAB coordinates.

Conventions
-----------
- sRGB / linear RGB values are unit range [0, 1]; LAB uses L in [0, 100],
  a/b in [-128, 127].
- Masks are H x W float64 arrays with values exactly 0 or 1.
- Resizing is bilinear with the half-pixel (corner-aligned=false) mapping.
"""

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .errors import DecodeError, StateError

SRGB = "srgb"
LINEAR_RGB = "linear_rgb"
LAB = "lab"

RAW = "raw"
DILATED = "dilated"

# Column-stochastic sRGB(D65) -> XYZ matrix and companion constants.
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65_WHITE = np.array([0.95047, 1.00000, 1.08883])
_LAB_DELTA = 6.0 / 29.0

_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass
class ImageTensor:
    """H x W x 3 image with an explicit color space tag."""

    data: np.ndarray
    color_space: str = SRGB

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got shape {self.data.shape}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError("image must have at least one row and column")
        if not np.isfinite(self.data).all():
            raise ValueError("image contains non-finite values")
        if self.color_space in (SRGB, LINEAR_RGB):
            if self.data.min() < 0.0 or self.data.max() > 1.0:
                raise ValueError(f"{self.color_space} values must lie in [0, 1]")
        elif self.color_space == LAB:
            # 1e-3 slack: the conversion matrix rows are rounded constants,
            # so reference white lands a hair above L = 100.
            ch_lo = self.data.min(axis=(0, 1))
            ch_hi = self.data.max(axis=(0, 1))
            if ch_lo[0] < -1e-3 or ch_hi[0] > 100.0 + 1e-3:
                raise ValueError("LAB lightness must lie in [0, 100]")
            if ch_lo[1:].min() < -128.0 or ch_hi[1:].max() > 127.0:
                raise ValueError("LAB a/b must lie in [-128, 127]")
        else:
            raise ValueError(f"unknown color space {self.color_space!r}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class ShadowMask:
    """H x W binary map; `kind` records whether it has been dilated."""

    data: np.ndarray
    kind: str = RAW

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"mask must be HxW, got shape {self.data.shape}")
        if not ((self.data == 0.0) | (self.data == 1.0)).all():
            raise ValueError("mask values must be exactly 0 or 1")
        if self.kind not in (RAW, DILATED):
            raise ValueError(f"unknown mask kind {self.kind!r}")

    @property
    def fraction(self) -> float:
        """Fraction of set pixels."""
        return float(self.data.mean())


def load_image(path) -> ImageTensor:
    """Load an 8- or 16-bit RGB raster file as a unit-range sRGB image.

    Raises FileNotFoundError for a missing path and DecodeError when the
    file is corrupt or not 3-channel RGB.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such image: {p}")
    raw = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DecodeError(f"could not decode {p}")
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise DecodeError(f"{p} is not a 3-channel RGB image (shape {raw.shape})")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise DecodeError(f"{p} has unsupported sample type {raw.dtype}")
    rgb = raw[:, :, ::-1].astype(np.float64) / scale
    return ImageTensor(rgb, SRGB)


def save_image(img: ImageTensor, path) -> None:
    """Write an sRGB image as 8-bit PNG (values clamped, rounded half-up)."""
    if img.color_space != SRGB:
        raise StateError(f"can only save sRGB images, got {img.color_space}")
    data = np.clip(img.data, 0.0, 1.0)
    quantized = np.floor(data * 255.0 + 0.5).astype(np.uint8)
    if not cv2.imwrite(str(path), quantized[:, :, ::-1]):
        raise OSError(f"could not write image to {path}")


def load_mask(path, kind: str = RAW, single_channel_only: bool = False) -> ShadowMask:
    """Load a binary mask PNG; values above half-range count as set.

    Accepts single-channel files and, unless `single_channel_only`,
    3-channel files whose first channel carries the mask (common in
    dataset mask folders).
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such mask: {p}")
    raw = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DecodeError(f"could not decode {p}")
    if raw.ndim == 3:
        if single_channel_only:
            raise DecodeError(f"{p} is not a single-channel mask (shape {raw.shape})")
        raw = raw[:, :, 0]
    threshold = 127 if raw.dtype == np.uint8 else 32767
    return ShadowMask((raw > threshold).astype(np.float64), kind)


def save_mask(mask: ShadowMask, path) -> None:
    """Write a mask as an 8-bit single-channel PNG (set pixels -> 255)."""
    if not cv2.imwrite(str(path), (mask.data * 255.0).astype(np.uint8)):
        raise OSError(f"could not write mask to {path}")


def resize(img: ImageTensor, height: int, width: int) -> ImageTensor:
    """Bilinear resize (half-pixel convention); color space is preserved."""
    if height < 1 or width < 1:
        raise ValueError(f"target size must be positive, got {height}x{width}")
    if (height, width) == (img.height, img.width):
        return ImageTensor(img.data.copy(), img.color_space)
    out = cv2.resize(img.data, (width, height), interpolation=cv2.INTER_LINEAR)
    return ImageTensor(out, img.color_space)


def resize_mask(mask: ShadowMask, height: int, width: int) -> ShadowMask:
    """Nearest-neighbor resize so the mask stays strictly binary."""
    if height < 1 or width < 1:
        raise ValueError(f"target size must be positive, got {height}x{width}")
    if (height, width) == mask.data.shape:
        return ShadowMask(mask.data.copy(), mask.kind)
    out = cv2.resize(mask.data, (width, height), interpolation=cv2.INTER_NEAREST)
    return ShadowMask(out, mask.kind)


def srgb_to_lab(img: ImageTensor) -> ImageTensor:
    """Convert sRGB to CIE LAB (D65 2-degree observer).

    Uses the standard two-piece sRGB linearization, the D65 primaries
    matrix, and the cube-root lightness function with the linear toe.
    """
    if img.color_space != SRGB:
        raise StateError(f"expected an sRGB image, got {img.color_space}")
    c = img.data
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T
    t = xyz / _D65_WHITE
    cube = _LAB_DELTA**3
    f = np.where(t > cube, np.cbrt(t), t / (3.0 * _LAB_DELTA**2) + 4.0 / 29.0)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    lab = np.stack(
        [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1
    )
    return ImageTensor(lab, LAB)


def dilate(mask: ShadowMask, radius: int) -> ShadowMask:
    """Binary dilation with a square (2*radius+1) structuring element."""
    if radius < 0:
        raise ValueError(f"dilation radius must be >= 0, got {radius}")
    if radius == 0:
        return ShadowMask(mask.data.copy(), DILATED)
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    out = ndimage.binary_dilation(mask.data.astype(bool), structure=structure)
    return ShadowMask(out.astype(np.float64), DILATED)


def luma(img: ImageTensor | np.ndarray) -> np.ndarray:
    """Rec. 601 luma (0.299 R + 0.587 G + 0.114 B) of an sRGB image."""
    data = img.data if isinstance(img, ImageTensor) else np.asarray(img)
    return data @ _LUMA_WEIGHTS
