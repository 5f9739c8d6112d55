"""Pixel-level preprocessing: bottom crop with box remapping and HSV blackout.

Images are ``(height, width, 3)`` ``uint8`` RGB arrays.
HSV uses the half-degree hue scale: H in [0, 179], S and V in [0, 255].
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .annotations import AnnotatedImage, BoundingBox
from .errors import CropSpecMismatch, CropTallerThanImage, OutOfRange, UnreadableFile

# pavement colour range used for blackout by default
DEFAULT_LOWER = (127, 36, 33)
DEFAULT_UPPER = (179, 255, 255)


@dataclass(frozen=True)
class HsvRange:
    lower: tuple[int, int, int] = DEFAULT_LOWER
    upper: tuple[int, int, int] = DEFAULT_UPPER

    def __post_init__(self) -> None:
        limits = (179, 255, 255)
        object.__setattr__(self, "lower", tuple(int(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(int(v) for v in self.upper))
        if len(self.lower) != 3 or len(self.upper) != 3:
            raise OutOfRange("HSV bounds must have three channels")
        for lo, hi, top in zip(self.lower, self.upper, limits):
            if not (0 <= lo <= hi <= top):
                raise OutOfRange(f"invalid HSV range {self.lower}..{self.upper}")


@dataclass(frozen=True)
class CropSpec:
    target_width: int
    target_height: int

    def __post_init__(self) -> None:
        if self.target_width <= 0 or self.target_height <= 0:
            raise OutOfRange(f"crop size {self.target_width}x{self.target_height} is not positive")

    def check(self, width: int, height: int) -> int:
        """Validate against a source size and return the number of rows cut from the top."""
        if self.target_width != width:
            raise CropSpecMismatch(
                f"crop width {self.target_width} differs from image width {width}"
            )
        if self.target_height > height:
            raise CropTallerThanImage(
                f"crop height {self.target_height} exceeds image height {height}"
            )
        return height - self.target_height


def _round_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # round-half-up of num/den for num >= 0, den > 0, in exact integer arithmetic
    return (2 * num + den) // (2 * den)


def rgb_to_hsv_array(rgb: np.ndarray) -> np.ndarray:
    """Vectorised RGB -> HSV over an ``(..., 3)`` integer array."""
    rgb = np.asarray(rgb)
    if rgb.shape[-1] != 3:
        raise OutOfRange(f"expected trailing RGB axis, got shape {rgb.shape}")
    c = rgb.astype(np.int64)
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    v = c.max(axis=-1)
    delta = v - c.min(axis=-1)
    safe_v = np.where(v == 0, 1, v)
    s = np.where(v == 0, 0, _round_div(255 * delta, safe_v))

    d = np.where(delta == 0, 1, delta)
    # hue in half-degrees is 30 * sextant_offset as a rational num/d; shift to non-negative
    num = np.where(
        v == r,
        30 * (g - b) + 180 * d,
        np.where(v == g, 60 * d + 30 * (b - r), 120 * d + 30 * (r - g)),
    )
    h = _round_div(num, d) % 180
    h = np.where((s == 0) | (delta == 0), 0, h)
    return np.stack([h, s, v], axis=-1)


def rgb_to_hsv(pixel: tuple[int, int, int]) -> tuple[int, int, int]:
    """Convert a single RGB pixel to ``(h, s, v)``.

    >>> rgb_to_hsv((0, 0, 255))
    (120, 255, 255)
    """
    if any(not (0 <= ch <= 255) for ch in pixel):
        raise OutOfRange(f"RGB channel outside [0, 255] in {pixel}")
    h, s, v = rgb_to_hsv_array(np.asarray(pixel, dtype=np.int64)).tolist()
    return (h, s, v)


def hsv_mask(img: np.ndarray, hsv_range: HsvRange) -> np.ndarray:
    """Boolean mask of pixels whose HSV lies inside ``hsv_range`` (inclusive)."""
    hsv = rgb_to_hsv_array(img)
    lower = np.asarray(hsv_range.lower)
    upper = np.asarray(hsv_range.upper)
    return np.all((hsv >= lower) & (hsv <= upper), axis=-1)


def hsv_blackout(img: np.ndarray, hsv_range: HsvRange = HsvRange(), keep_inside: bool = True) -> np.ndarray:
    """Zero every pixel on the discarded side of ``hsv_range``.

    With ``keep_inside`` pixels inside the range survive; otherwise the
    mask is inverted. The input is not modified.
    """
    mask = hsv_mask(img, hsv_range)
    if not keep_inside:
        mask = ~mask
    out = img.copy()
    out[~mask] = 0
    return out


def crop_bottom(img: np.ndarray, spec: CropSpec) -> np.ndarray:
    """Keep the bottom ``spec.target_height`` rows at full width."""
    height, width = img.shape[:2]
    cut = spec.check(width, height)
    return img[cut:].copy()


def remap_boxes_after_crop(
    img: AnnotatedImage, spec: CropSpec, min_visible_fraction: float = 0.25
) -> tuple[AnnotatedImage, int]:
    """Translate boxes into the cropped frame.

    Boxes are shifted up by the number of removed rows and clipped to the
    new frame. A box whose clipped area falls below ``min_visible_fraction``
    of its original area is dropped. Returns the remapped image and the
    number of dropped boxes.
    """
    if not (0 < min_visible_fraction <= 1):
        raise OutOfRange(f"min_visible_fraction {min_visible_fraction} not in (0, 1]")
    cut = spec.check(img.width, img.height)
    top = spec.target_height
    kept: list[BoundingBox] = []
    dropped = 0
    for box in img.boxes:
        y0 = min(max(box.y_min - cut, 0.0), top)
        y1 = min(max(box.y_max - cut, 0.0), top)
        visible = (y1 - y0) * (box.x_max - box.x_min)
        if y1 <= y0 or visible / box.area < min_visible_fraction:
            dropped += 1
            continue
        kept.append(replace(box, y_min=y0, y_max=y1))
    return replace(img, height=top, boxes=tuple(kept)), dropped


def load_image(path: str | Path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise UnreadableFile(str(exc), source=str(path)) from None


def save_image(img: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    im = PILImage.fromarray(np.ascontiguousarray(img, dtype=np.uint8), mode="RGB")
    if path.suffix.lower() in (".jpg", ".jpeg"):
        im.save(path, quality=95)
    else:
        im.save(path)


def image_size(path: str | Path) -> tuple[int, int]:
    """``(width, height)`` read from the file header without decoding pixels."""
    try:
        with PILImage.open(path) as im:
            return im.size
    except (OSError, ValueError) as exc:
        raise UnreadableFile(str(exc), source=str(path)) from None
