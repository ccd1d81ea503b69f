"""Dense TV-L1 optical flow (primal-dual, coarse-to-fine with warping).

The solver follows the usual duality-based scheme: at every pyramid level the
next frame is warped by the current flow, the data term is linearized around
it, and the iterations alternate a pointwise thresholding step on the
linearized residual with a projected dual ascent on the total-variation term.

Frames are given as grayscale floats in [0, 1]. Internally intensities are
scaled to 0..255 so that the conventional ``lambda=0.15`` keeps its usual
balance between data and smoothness.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .tensorcore import VideoClip

LUMA = np.array([0.299, 0.587, 0.114])
_INTENSITY_SCALE = 255.0
_GRAD_IS_ZERO = 1e-10


@dataclass(frozen=True)
class TvL1Params:
    lam: float = 0.15
    theta: float = 0.3
    tau: float = 0.25
    warps: int = 5
    max_iters: int = 30
    pyramid_scale: float = 0.5
    min_level_size: int = 16
    tol: float = 0.0

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if not 0 < self.tau <= 0.25:
            raise ValueError("tau must lie in (0, 0.25]")
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.warps < 1 or self.max_iters < 1:
            raise ValueError("warps and max_iters must be >= 1")
        if not 0 < self.pyramid_scale < 1:
            raise ValueError("pyramid_scale must lie in (0, 1)")
        if self.min_level_size < 1:
            raise ValueError("min_level_size must be >= 1")


@dataclass
class FlowField:
    u: np.ndarray
    v: np.ndarray
    # TV-L1 energy after each warp, finest level last; filled by tvl1_flow
    energy_trace: list = field(default_factory=list, repr=False)

    @property
    def shape(self):
        return self.u.shape

    def stacked(self) -> np.ndarray:
        return np.stack([self.u, self.v], axis=-1)


def to_gray(frame: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an ``H x W x 3`` frame, returned in [0, 1].

    u8 frames are scaled by 1/255; float frames are assumed to be in the
    normalized [-1, 1] working form.
    """
    if frame.ndim == 2:
        g = np.asarray(frame, dtype=np.float64)
        return g / 255.0 if frame.dtype == np.uint8 else g
    if frame.dtype == np.uint8:
        return frame.astype(np.float64) @ LUMA / 255.0
    return (np.asarray(frame, dtype=np.float64) @ LUMA + 1.0) / 2.0


def pyramid_sizes(h: int, w: int, scale: float, min_level_size: int) -> list[tuple[int, int]]:
    sizes = [(h, w)]
    while True:
        nh = int(round(sizes[-1][0] * scale))
        nw = int(round(sizes[-1][1] * scale))
        if min(nh, nw) < min_level_size:
            return sizes
        sizes.append((nh, nw))


def _zoom_to(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = img.shape
    ys = (np.arange(shape[0]) + 0.5) * (h / shape[0]) - 0.5
    xs = (np.arange(shape[1]) + 0.5) * (w / shape[1]) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(img, [yy, xx], order=1, mode="nearest")


def _downsample(img: np.ndarray, shape: tuple[int, int], scale: float) -> np.ndarray:
    sigma = 0.6 * np.sqrt(1.0 / scale ** 2 - 1.0)
    return _zoom_to(ndimage.gaussian_filter(img, sigma, mode="nearest"), shape)


def _forward_grad(f: np.ndarray):
    fx = np.zeros_like(f)
    fy = np.zeros_like(f)
    fx[:, :-1] = f[:, 1:] - f[:, :-1]
    fy[:-1, :] = f[1:, :] - f[:-1, :]
    return fx, fy


def _divergence(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    # negative adjoint of _forward_grad
    d = np.zeros_like(px)
    d[:, 0] = px[:, 0]
    d[:, 1:-1] = px[:, 1:-1] - px[:, :-2]
    d[:, -1] = -px[:, -2]
    d[0, :] += py[0, :]
    d[1:-1, :] += py[1:-1, :] - py[:-2, :]
    d[-1, :] += -py[-2, :]
    return d


def _central_grad(f: np.ndarray):
    fx = np.zeros_like(f)
    fy = np.zeros_like(f)
    fx[:, 1:-1] = 0.5 * (f[:, 2:] - f[:, :-2])
    fy[1:-1, :] = 0.5 * (f[2:, :] - f[:-2, :])
    return fx, fy


def _warp(img: np.ndarray, u: np.ndarray, v: np.ndarray, grid) -> np.ndarray:
    yy, xx = grid
    return ndimage.map_coordinates(img, [yy + v, xx + u], order=3, mode="nearest")


def tvl1_energy(i0: np.ndarray, i1: np.ndarray, u: np.ndarray, v: np.ndarray, lam: float) -> float:
    """Total variation of both flow components plus ``lam`` times the L1
    brightness-constancy residual, on 0..255-scaled intensities."""
    h, w = i0.shape
    grid = np.mgrid[0:h, 0:w].astype(np.float64)
    i1w = _warp(i1, u, v, grid)
    ux, uy = _forward_grad(u)
    vx, vy = _forward_grad(v)
    tv = np.sqrt(ux ** 2 + uy ** 2).sum() + np.sqrt(vx ** 2 + vy ** 2).sum()
    return float(tv + lam * np.abs(i1w - i0).sum())


def _solve_level(i0, i1, u, v, params: TvL1Params, energies: list):
    h, w = i0.shape
    grid = np.mgrid[0:h, 0:w].astype(np.float64)
    i1x, i1y = _central_grad(i1)
    p = [np.zeros_like(i0) for _ in range(4)]  # dual fields: (p1x, p1y, p2x, p2y)
    l_t = params.lam * params.theta
    taut = params.tau / params.theta
    for _ in range(params.warps):
        i1w = _warp(i1, u, v, grid)
        ix = _warp(i1x, u, v, grid)
        iy = _warp(i1y, u, v, grid)
        grad = ix ** 2 + iy ** 2
        rho_c = i1w - ix * u - iy * v - i0
        for _ in range(params.max_iters):
            rho = rho_c + ix * u + iy * v
            lo = rho < -l_t * grad
            hi = rho > l_t * grad
            mid = ~(lo | hi) & (grad > _GRAD_IS_ZERO)
            du = np.zeros_like(u)
            dv = np.zeros_like(v)
            du[lo] = l_t * ix[lo]
            dv[lo] = l_t * iy[lo]
            du[hi] = -l_t * ix[hi]
            dv[hi] = -l_t * iy[hi]
            scale = np.zeros_like(rho)
            scale[mid] = -rho[mid] / grad[mid]
            du[mid] = scale[mid] * ix[mid]
            dv[mid] = scale[mid] * iy[mid]
            u_new = u + du + params.theta * _divergence(p[0], p[1])
            v_new = v + dv + params.theta * _divergence(p[2], p[3])
            change = np.mean((u_new - u) ** 2 + (v_new - v) ** 2)
            u, v = u_new, v_new
            ux, uy = _forward_grad(u)
            vx, vy = _forward_grad(v)
            ng_u = 1.0 + taut * np.sqrt(ux ** 2 + uy ** 2)
            ng_v = 1.0 + taut * np.sqrt(vx ** 2 + vy ** 2)
            p[0] = (p[0] + taut * ux) / ng_u
            p[1] = (p[1] + taut * uy) / ng_u
            p[2] = (p[2] + taut * vx) / ng_v
            p[3] = (p[3] + taut * vy) / ng_v
            if change < params.tol ** 2:
                break
        energies.append(tvl1_energy(i0, i1, u, v, params.lam))
    return u, v


def tvl1_flow(prev: np.ndarray, next_: np.ndarray, params: TvL1Params | None = None) -> FlowField:
    """Flow ``(u, v)`` such that ``prev(x, y) ~ next(x + u, y + v)``.

    ``prev`` and ``next_`` are grayscale frames in [0, 1] (2-D) or RGB
    frames, which are converted with Rec.601 luma weights.
    """
    params = params or TvL1Params()
    i0 = to_gray(prev) * _INTENSITY_SCALE
    i1 = to_gray(next_) * _INTENSITY_SCALE
    if i0.shape != i1.shape:
        raise ValueError(f"frame size mismatch: {i0.shape} vs {i1.shape}")
    sizes = pyramid_sizes(*i0.shape, params.pyramid_scale, params.min_level_size)
    pyr0, pyr1 = [i0], [i1]
    for shape in sizes[1:]:
        pyr0.append(_downsample(pyr0[-1], shape, params.pyramid_scale))
        pyr1.append(_downsample(pyr1[-1], shape, params.pyramid_scale))

    u = np.zeros(sizes[-1])
    v = np.zeros(sizes[-1])
    trace: list = []
    for level in range(len(sizes) - 1, -1, -1):
        energies: list = []
        u, v = _solve_level(pyr0[level], pyr1[level], u, v, params, energies)
        trace.append(energies)
        if level > 0:
            up = 1.0 / params.pyramid_scale
            u = _zoom_to(u, sizes[level - 1]) * up
            v = _zoom_to(v, sizes[level - 1]) * up
    h, w = i0.shape
    u = np.clip(np.nan_to_num(u), -w, w)
    v = np.clip(np.nan_to_num(v), -h, h)
    return FlowField(u, v, trace)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SSHA_THREADS", "1")))
    except ValueError:
        return 1


def clip_flow(clip: VideoClip, params: TvL1Params | None = None,
              max_displacement: float = 8.0, workers: int | None = None) -> VideoClip:
    """Two-channel flow clip with the same length as ``clip``.

    The ``T-1`` fields from consecutive pairs are followed by a copy of the
    last one; ``(u, v)`` are divided by ``max_displacement`` and clamped to
    [-1, 1].
    """
    frames = clip.frames
    t = frames.shape[0]
    if t < 2:
        raise ValueError("flow needs at least two frames")
    if frames.shape[3] != 3:
        raise ValueError("clip_flow expects an RGB clip")
    gray = [to_gray(f) for f in frames]
    pairs = list(zip(gray[:-1], gray[1:]))
    workers = workers or _threads()
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            fields = list(ex.map(lambda pr: tvl1_flow(pr[0], pr[1], params), pairs))
    else:
        fields = [tvl1_flow(a, b, params) for a, b in pairs]
    fields.append(fields[-1])
    out = np.stack([f.stacked() for f in fields]) / max_displacement
    return VideoClip(np.clip(out, -1.0, 1.0).astype(np.float32), clip.fps)


def flow_to_rgb(u: np.ndarray, v: np.ndarray, max_mag: float | None = None) -> np.ndarray:
    """Color-wheel rendering: hue encodes direction, saturation magnitude."""
    mag = np.hypot(u, v)
    max_mag = max_mag or max(float(mag.max()), 1e-9)
    hue = (np.arctan2(-v, -u) / np.pi + 1.0) / 2.0
    sat = np.clip(mag / max_mag, 0.0, 1.0)
    h6 = hue * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    val = np.ones_like(sat)
    p = val * (1 - sat)
    q = val * (1 - sat * f)
    t = val * (1 - sat * (1 - f))
    lut = [(val, t, p), (q, val, p), (p, val, t), (p, q, val), (t, p, val), (val, p, q)]
    rgb = np.zeros(u.shape + (3,))
    for k, (r, g, b) in enumerate(lut):
        m = i == k
        rgb[m, 0], rgb[m, 1], rgb[m, 2] = r[m], g[m], b[m]
    return np.clip(rgb * 255.0 + 0.5, 0, 255).astype(np.uint8)
