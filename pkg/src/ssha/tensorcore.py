"""Video tensors, frame sampling, region cropping and prior-box geometry."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F


class Channels(enum.IntEnum):
    RGB = 3
    FLOW = 2


@dataclass(frozen=True)
class VideoClip:
    """A dense ``T x H x W x C`` clip.

    ``frames`` is either the u8 source form (0..255) or a float32 working
    form. Instances are treated as immutable; operations return new clips.
    """

    frames: np.ndarray
    fps: float = 25.0

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4:
            raise ValueError(f"clip must be 4-D (T,H,W,C), got shape {f.shape}")
        t, h, w, c = f.shape
        if min(t, h, w) < 1:
            raise ValueError(f"empty clip: shape {f.shape}")
        if c not in (2, 3):
            raise ValueError(f"channels must be 2 (flow) or 3 (RGB), got {c}")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(self.frames.shape)

    @property
    def channels(self) -> Channels:
        return Channels(self.frames.shape[3])

    @property
    def is_u8(self) -> bool:
        return self.frames.dtype == np.uint8


@dataclass(frozen=True, order=True)
class RegionBox:
    """Normalized axis-aligned rectangle ``[x0, x1) x [y0, y1)`` in [0, 1]."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (0.0 <= self.x0 < self.x1 <= 1.0 and 0.0 <= self.y0 < self.y1 <= 1.0):
            raise ValueError(f"invalid region box {self.as_tuple()}")

    @classmethod
    def full(cls) -> "RegionBox":
        return cls(0.0, 0.0, 1.0, 1.0)

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


FULL_BOX = RegionBox.full()


@dataclass(frozen=True)
class PriorBoxSet:
    boxes: tuple[RegionBox, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not self.boxes:
            raise ValueError("prior box set must contain at least one box")
        if not covers_unit_square(self.boxes):
            raise ValueError("prior boxes must cover the full unit square")

    def __len__(self) -> int:
        return len(self.boxes)

    def __getitem__(self, i: int) -> RegionBox:
        return self.boxes[i]

    def __iter__(self):
        return iter(self.boxes)

    @classmethod
    def from_lists(cls, boxes: Iterable[Sequence[float]]) -> "PriorBoxSet":
        return cls(tuple(RegionBox(*map(float, b)) for b in boxes))

    def to_lists(self) -> list[list[float]]:
        return [list(b.as_tuple()) for b in self.boxes]


def covers_unit_square(boxes: Sequence[RegionBox], resolution: float = 0.01) -> bool:
    """Grid check that every sample point of [0,1]^2 lies in some box."""
    n = int(round(1.0 / resolution)) + 1
    g = np.linspace(0.0, 1.0, n)
    xs, ys = np.meshgrid(g, g, indexing="xy")
    covered = np.zeros_like(xs, dtype=bool)
    for b in boxes:
        covered |= (xs >= b.x0) & (xs <= b.x1) & (ys >= b.y0) & (ys <= b.y1)
    return bool(covered.all())


def default_prior_boxes(k: int = 5) -> PriorBoxSet:
    """Four 0.6-side corner boxes plus one centered box of the same side."""
    if k != 5:
        raise ValueError(f"unsupported prior box count {k}; only k=5 is defined")
    return PriorBoxSet.from_lists([
        (0.0, 0.0, 0.6, 0.6),
        (0.4, 0.0, 1.0, 0.6),
        (0.0, 0.4, 0.6, 1.0),
        (0.4, 0.4, 1.0, 1.0),
        (0.2, 0.2, 0.8, 0.8),
    ])


def compose(outer: RegionBox, inner: RegionBox) -> RegionBox:
    """Express ``inner`` (relative to ``outer``) in the coordinates ``outer`` lives in."""
    w = outer.x1 - outer.x0
    h = outer.y1 - outer.y0
    # clamp guards against 1 + 1ulp from float rounding
    return RegionBox(
        max(0.0, outer.x0 + inner.x0 * w),
        max(0.0, outer.y0 + inner.y0 * h),
        min(1.0, outer.x0 + inner.x1 * w),
        min(1.0, outer.y0 + inner.y1 * h),
    )


def normalize(clip: VideoClip) -> VideoClip:
    """Map u8 pixels to float32 in [-1, 1] via ``v / 127.5 - 1``."""
    if not clip.is_u8:
        raise TypeError("normalize expects a u8 source clip")
    return VideoClip(normalize_array(clip.frames), clip.fps)


def normalize_array(a: np.ndarray) -> np.ndarray:
    return (np.asarray(a, dtype=np.float32) / np.float32(127.5)) - np.float32(1.0)


def denormalize(clip: VideoClip) -> VideoClip:
    """Inverse of :func:`normalize`, rounding back to u8."""
    v = (np.asarray(clip.frames, dtype=np.float64) + 1.0) * 127.5
    return VideoClip(np.clip(np.rint(v), 0, 255).astype(np.uint8), clip.fps)


def sample_indices(t: int, t_out: int) -> np.ndarray:
    """Frame indices ``floor(i*T/t_out)``; a short source keeps every frame once
    and pads the tail with its last frame."""
    if t < 1:
        raise ValueError("cannot sample frames from an empty clip")
    if t_out < 1:
        raise ValueError(f"t_out must be >= 1, got {t_out}")
    if t < t_out:
        return np.concatenate([np.arange(t), np.full(t_out - t, t - 1)]).astype(np.int64)
    return (np.arange(t_out, dtype=np.int64) * t) // t_out


def sample_frames(clip: VideoClip, t_out: int) -> VideoClip:
    return VideoClip(clip.frames[sample_indices(clip.frames.shape[0], t_out)], clip.fps)


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def pixel_rect(box: RegionBox, height: int, width: int) -> tuple[int, int, int, int]:
    """Integer ``(px0, py0, px1, py1)`` covered by a normalized box."""
    px0 = round_half_away(box.x0 * width)
    px1 = round_half_away(box.x1 * width)
    py0 = round_half_away(box.y0 * height)
    py1 = round_half_away(box.y1 * height)
    return px0, py0, px1, py1


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out)
    return np.minimum(np.floor(src).astype(np.int64), n_in - 1)


def resize_frames(frames: np.ndarray, out_h: int, out_w: int, method: str = "bilinear") -> np.ndarray:
    """Resize a ``(T,H,W,C)`` array to ``(T,out_h,out_w,C)`` float32."""
    t, h, w, c = frames.shape
    if method == "nearest":
        yi = _nearest_index(h, out_h)
        xi = _nearest_index(w, out_w)
        return np.asarray(frames[:, yi][:, :, xi], dtype=np.float32)
    if method != "bilinear":
        raise ValueError(f"unknown resize method {method!r}")
    if (h, w) == (out_h, out_w):
        return np.asarray(frames, dtype=np.float32).copy()
    # half-pixel centers, edge-clamped: src = (dst + 0.5) * in / out - 0.5
    x = torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float32)).permute(0, 3, 1, 2)
    out = F.interpolate(x, size=(out_h, out_w), mode="bilinear", align_corners=False)
    return out.permute(0, 2, 3, 1).contiguous().numpy()


def crop_array(frames: np.ndarray, box: RegionBox) -> np.ndarray:
    h, w = frames.shape[1:3]
    px0, py0, px1, py1 = pixel_rect(box, h, w)
    if px1 - px0 < 1 or py1 - py0 < 1:
        raise ValueError(
            f"degenerate zoom: box {box.as_tuple()} covers {px1 - px0}x{py1 - py0} pixels")
    return frames[:, py0:py1, px0:px1]


def crop_resize(clip: VideoClip, box: RegionBox, out_h: int, out_w: int,
                method: str = "bilinear") -> VideoClip:
    """Crop every frame to ``box`` and resample to ``out_h x out_w``.

    The output is float32 regardless of the source dtype.
    """
    cropped = crop_array(clip.frames, box)
    return VideoClip(resize_frames(cropped, out_h, out_w, method), clip.fps)
