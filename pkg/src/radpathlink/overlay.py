"""Clickable overlay regions over rendered slices.

Regions are connected groups of segmentation-colored pixels. The service
computes them straight from SEG mask slices; the same extraction also runs
over RGBA buffers sampled from a viewer canvas, and the two paths agree
bit for bit on identical input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .volume import BinaryMask


class SliceOutOfRange(Exception):
    """Requested slice index is outside the mask."""


@dataclass(frozen=True)
class ColorPredicate:
    """Red-dominance test for segmentation pixels. The thresholds are
    configuration; these defaults suit an opaque red overlay."""

    min_red: int = 160
    dominance: float = 2.0
    min_alpha: int = 1


DEFAULT_PREDICATE = ColorPredicate()
DEFAULT_MIN_PIXELS = 16  # suppresses anti-aliasing specks


def matches(p: ColorPredicate, r: int, g: int, b: int, a: int) -> bool:
    return a >= p.min_alpha and r >= p.min_red \
        and r >= p.dominance * g and r >= p.dominance * b


@dataclass
class PixelBuffer:
    """RGBA bytes, row-major, 4 bytes per pixel."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("buffer dimensions must be positive")
        if len(self.pixels) != self.width * self.height * 4:
            raise ValueError("pixel payload length does not match dimensions")


@dataclass(frozen=True)
class OverlayRegion:
    id: int
    bbox: tuple[int, int, int, int]  # x, y, w, h in buffer pixels
    pixel_count: int

    def to_json_dict(self) -> dict:
        x, y, w, h = self.bbox
        return {"id": self.id, "x": x, "y": y, "w": w, "h": h,
                "pixelCount": self.pixel_count}


@dataclass(frozen=True)
class ScreenTransform:
    scale_x: float = 1.0
    scale_y: float = 1.0
    offset_x: float = 0.0
    offset_y: float = 0.0

    def __post_init__(self) -> None:
        if self.scale_x <= 0 or self.scale_y <= 0:
            raise ValueError("scales must be positive")


def to_screen(region: OverlayRegion, t: ScreenTransform) -> tuple[float, float, float, float]:
    x, y, w, h = region.bbox
    return (x * t.scale_x + t.offset_x, y * t.scale_y + t.offset_y,
            w * t.scale_x, h * t.scale_y)


def _match_mask(buf: PixelBuffer, p: ColorPredicate) -> np.ndarray:
    arr = np.frombuffer(buf.pixels, dtype=np.uint8).reshape(buf.height, buf.width, 4)
    r = arr[:, :, 0].astype(np.float64)
    g = arr[:, :, 1]
    b = arr[:, :, 2]
    a = arr[:, :, 3]
    return ((a >= p.min_alpha) & (arr[:, :, 0] >= p.min_red)
            & (r >= p.dominance * g) & (r >= p.dominance * b))


def extract_regions(buf: PixelBuffer,
                    predicate: Optional[ColorPredicate] = None,
                    min_pixels: int = DEFAULT_MIN_PIXELS) -> list[OverlayRegion]:
    """Group matching pixels into 4-connected regions via an explicit-stack
    flood fill.

    The scan is row-major; surviving regions (pixel_count >= min_pixels) are
    sorted by (bbox.y, bbox.x) and labeled 1..n.
    """
    if min_pixels < 1:
        raise ValueError("min_pixels must be >= 1")
    p = predicate or DEFAULT_PREDICATE
    match = _match_mask(buf, p)
    visited = np.zeros_like(match)
    height, width = match.shape

    found: list[tuple[int, int, int, int, int]] = []
    for y0 in range(height):
        for x0 in range(width):
            if not match[y0, x0] or visited[y0, x0]:
                continue
            stack = [(x0, y0)]
            visited[y0, x0] = True
            min_x = max_x = x0
            min_y = max_y = y0
            count = 0
            while stack:
                x, y = stack.pop()
                count += 1
                if x < min_x:
                    min_x = x
                elif x > max_x:
                    max_x = x
                if y < min_y:
                    min_y = y
                elif y > max_y:
                    max_y = y
                for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                    if 0 <= nx < width and 0 <= ny < height \
                            and match[ny, nx] and not visited[ny, nx]:
                        visited[ny, nx] = True
                        stack.append((nx, ny))
            found.append((min_x, min_y, max_x - min_x + 1, max_y - min_y + 1, count))

    survivors = [f for f in found if f[4] >= min_pixels]
    survivors.sort(key=lambda f: (f[1], f[0]))
    return [
        OverlayRegion(id=i, bbox=(x, y, w, h), pixel_count=count)
        for i, (x, y, w, h, count) in enumerate(survivors, start=1)
    ]


def render_mask_slice(mask: BinaryMask, slice_index: int) -> PixelBuffer:
    """Render one mask slice as an opaque pure-red RGBA buffer."""
    if not 0 <= slice_index < mask.geometry.slices:
        raise SliceOutOfRange("slice %d of %d" % (slice_index, mask.geometry.slices))
    bits = mask.bits[slice_index]
    rgba = np.zeros((mask.geometry.rows, mask.geometry.cols, 4), dtype=np.uint8)
    rgba[bits, 0] = 255
    rgba[bits, 3] = 255
    return PixelBuffer(width=mask.geometry.cols, height=mask.geometry.rows,
                       pixels=rgba.tobytes())


def regions_from_mask_slice(mask: BinaryMask, slice_index: int,
                            min_pixels: int = DEFAULT_MIN_PIXELS) -> list[OverlayRegion]:
    """Regions of one SEG mask slice; identical to sampling a red rendering
    of the same slice with the default predicate."""
    return extract_regions(render_mask_slice(mask, slice_index),
                           DEFAULT_PREDICATE, min_pixels)
