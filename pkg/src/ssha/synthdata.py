"""Deterministic synthetic two-class video corpus.

Every clip contains a few plain drifting discs and one *pair* of textured
rectangles that converge into contact. The two rectangles carry opposite
phases of a zero-mean texture around a shared mean color. In a violent clip
both textures jitter back and forth by 2 pixels every frame after contact;
in a non-violent clip they are still or slide once. The texture has period 4
and sums to zero over every even-aligned 2x2 block, so a 2-pixel slide flips
its sign while a half-resolution full-frame view sees nothing at all; only a
zoomed view shows the event.

All randomness comes from SplitMix64, so clips are byte-identical across
platforms for a given ``(config, label, seed)``. Pixel noise uses a
counter-based form of the same mixer and an Irwin-Hall(4) Gaussian
approximation built from integer draws, which needs no transcendental
functions.

SplitMix64 step::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .clipio import read_clip, write_clip
from .tensorcore import RegionBox, VideoClip

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
NOISE_STREAM = 0x6E6F697365  # "noise"
SPLIT_STREAM = 0x73706C6974  # "split"
MANIFEST_VERSION = 1


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return _mix(self.state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * (1.0 / (1 << 53)))

    def randint(self, lo: int, hi: int) -> int:
        """Integer in ``[lo, hi]`` inclusive."""
        return lo + self.next_u64() % (hi - lo + 1)

    def coin(self, p: float = 0.5) -> bool:
        return self.uniform() < p


def splitmix_block(seed: int, n: int) -> np.ndarray:
    """The first ``n`` outputs of ``SplitMix64(seed)``, vectorized."""
    with np.errstate(over="ignore"):
        k = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(seed & MASK64) + k * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
        return z ^ (z >> np.uint64(31))


def gaussian_noise(seed: int, shape: tuple, std: float) -> np.ndarray:
    n = int(np.prod(shape))
    raw = splitmix_block(seed, n)
    acc = np.zeros(n, dtype=np.float64)
    for shift in (0, 16, 32, 48):
        acc += ((raw >> np.uint64(shift)) & np.uint64(0xFFFF)).astype(np.float64) + 0.5
    # sum of 4 U(0,1): mean 2, variance 1/3
    z = (acc / 65536.0 - 2.0) * np.sqrt(3.0)
    return (z * std).reshape(shape)


class Label(enum.IntEnum):
    VIOLENT = 0
    NONVIOLENT = 1

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "Label":
        if isinstance(value, Label):
            return value
        if isinstance(value, str):
            return cls[value.upper().replace("-", "").replace("_", "")]
        return cls(int(value))


@dataclass(frozen=True)
class SynthConfig:
    frame_size: int = 128
    t: int = 24
    n_distractors: int = 4
    event_scale: float = 0.25
    sprite_speed: float = 1.0
    noise_std: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.event_scale <= 0.5:
            raise ValueError("event_scale must lie in (0, 0.5]")
        if self.frame_size < 32:
            raise ValueError("frame_size must be at least 32")
        if self.t < 2:
            raise ValueError("clips need at least 2 frames")
        if self.n_distractors < 0 or self.noise_std < 0:
            raise ValueError("n_distractors and noise_std must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class LabeledClip:
    clip: VideoClip
    label: Label
    gt_box: RegionBox | None
    seed: int
    name: str = ""


# every even-aligned pair of +1,-1,-1,+1 sums to zero, while the pattern's
# fundamental (a quarter cycle per pixel) survives mild resampling
_PHASE = np.array([1.0, -1.0, -1.0, 1.0])


def _even(x: float) -> int:
    return 2 * int(np.floor(x / 2.0 + 0.5))


def _direction(rng: SplitMix64) -> tuple[float, float]:
    # sqrt is correctly rounded everywhere; sin/cos are not
    while True:
        x, y = rng.uniform(-1, 1), rng.uniform(-1, 1)
        n = np.sqrt(x * x + y * y)
        if 0.1 < n <= 1.0:
            return x / n, y / n


def _background(rng: SplitMix64, size: int) -> np.ndarray:
    c0 = np.array([rng.uniform(50, 110) for _ in range(3)])
    c1 = np.array([rng.uniform(140, 200) for _ in range(3)])
    ux, uy = _direction(rng)
    g = np.arange(size, dtype=np.float64) / (size - 1)
    yy, xx = np.meshgrid(g, g, indexing="ij")
    ramp = ux * xx + uy * yy
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
    return c0 + (c1 - c0) * ramp[..., None]


def _pair_layout(cfg: SynthConfig, rng: SplitMix64):
    """Per-frame rectangles of the textured pair plus their bounding box from contact on."""
    s = cfg.frame_size
    limit = cfg.event_scale * s
    # at the start the pair spans 2 * rw + 2 pixels, so rw is capped to fit the limit
    rw = min(_even(0.11 * s), 2 * int((limit - 2) // 4))
    if rw < max(2, _even(0.05 * s)):
        raise ValueError(f"event_scale {cfg.event_scale} is too small for the sprite pair")
    rh = max(2, min(_even(0.23 * s), 2 * int(limit // 2)))
    ov = max(2, _even(0.6 * rw))
    sep0 = ov + 2
    width0 = 2 * rw - ov + sep0
    drift_x = min(_even(0.04 * s), 2 * int((limit - width0) // 2))
    drift_y = min(_even(0.04 * s), 2 * int((limit - rh) // 2))
    dx = _even(rng.randint(-drift_x, drift_x)) if drift_x else 0
    dy = _even(rng.randint(-drift_y, drift_y)) if drift_y else 0
    margin = 2
    x_lo = margin + max(0, -dx)
    x_hi = s - margin - width0 - max(0, dx)
    y_lo = margin + max(0, -dy)
    y_hi = s - margin - rh - max(0, dy)
    x0 = _even(rng.uniform(x_lo, x_hi))
    y0 = _even(rng.uniform(y_lo, y_hi))
    contact = max(1, cfg.t // 6)
    frames = []
    for t in range(cfg.t):
        frac = t / max(cfg.t - 1, 1)
        ox = x0 + _even(dx * frac)
        oy = y0 + _even(dy * frac)
        sep = _even(sep0 * max(0.0, 1.0 - t / contact))
        # A keeps its left edge; B slides in from the right
        a = (ox, oy, ox + rw, oy + rh)
        bx = ox + rw - ov + sep
        b = (bx, oy, bx + rw, oy + rh)
        frames.append((a, b))
    # the event is the contact phase, so the box covers the pair from contact on
    touching = frames[min(contact, cfg.t - 1):]
    xs0 = min(min(a[0], b[0]) for a, b in touching)
    ys0 = min(min(a[1], b[1]) for a, b in touching)
    xs1 = max(max(a[2], b[2]) for a, b in touching)
    ys1 = max(max(a[3], b[3]) for a, b in touching)
    return frames, (xs0, ys0, xs1, ys1), contact


def _phases(label: Label, cfg: SynthConfig, contact: int, rng: SplitMix64) -> list[float]:
    """Per frame: texture sign of rectangle A (B always carries the opposite).

    A sign change is the texture sliding by 2 pixels inside its rectangle.
    """
    first = 1.0 if rng.coin() else -1.0
    if label == Label.VIOLENT:
        return [first if t < contact else first * (-1.0) ** (t - contact) for t in range(cfg.t)]
    swap_at = rng.randint(contact, cfg.t - 1) if rng.coin() else cfg.t
    return [first if t < swap_at else -first for t in range(cfg.t)]


def generate_clip(cfg: SynthConfig, label, seed: int) -> LabeledClip:
    label = Label.parse(label)
    rng = SplitMix64(seed)
    s = cfg.frame_size
    bg = _background(rng, s)

    discs = []
    for _ in range(cfg.n_distractors):
        r = rng.uniform(0.03, 0.05) * s
        color = np.array([rng.uniform(20, 235) for _ in range(3)])
        px, py = rng.uniform(r, s - r), rng.uniform(r, s - r)
        ux, uy = _direction(rng)
        speed = cfg.sprite_speed * rng.uniform(0.5, 1.0)
        discs.append([px, py, speed * ux, speed * uy, r, color])

    pair, bbox, contact = _pair_layout(cfg, rng)
    mean = np.array([rng.uniform(75, 180) for _ in range(3)])
    amp = 70.0
    phase = _phases(label, cfg, contact, rng)
    a_on_top = rng.coin()

    yy, xx = np.mgrid[0:s, 0:s]
    pattern = (_PHASE[yy % 4] * _PHASE[xx % 4])[..., None]

    out = np.empty((cfg.t, s, s, 3), dtype=np.float64)
    for t in range(cfg.t):
        frame = bg.copy()
        for d in discs:
            px, py, vx, vy, r, color = d
            frame[(xx - px) ** 2 + (yy - py) ** 2 <= r * r] = color
        (a, b) = pair[t]
        tex_a = mean + phase[t] * amp * pattern
        tex_b = mean - phase[t] * amp * pattern
        layers = [(b, tex_b), (a, tex_a)] if a_on_top else [(a, tex_a), (b, tex_b)]
        for (x0, y0, x1, y1), tex in layers:
            frame[y0:y1, x0:x1] = tex[y0:y1, x0:x1]
        out[t] = frame
        for d in discs:
            d[0] += d[2]
            d[1] += d[3]
            for pos, vel in ((0, 2), (1, 3)):
                if d[pos] < d[4] or d[pos] > s - d[4]:
                    d[vel] = -d[vel]
                    d[pos] = min(max(d[pos], d[4]), s - d[4])

    if cfg.noise_std > 0:
        out += gaussian_noise(_mix((seed ^ NOISE_STREAM) & MASK64), out.shape, cfg.noise_std)
    frames = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)

    gt = None
    if label == Label.VIOLENT:
        x0, y0, x1, y1 = bbox
        gt = RegionBox(x0 / s, y0 / s, x1 / s, y1 / s)
    return LabeledClip(VideoClip(frames), label, gt, seed)


def stratified_split(labels: list[Label], seed: int, test_fraction: float = 0.2) -> list[str]:
    """Per-class deterministic shuffle; the first ``test_fraction`` of each class is test."""
    splits = ["train"] * len(labels)
    rng = SplitMix64(_mix((seed ^ SPLIT_STREAM) & MASK64))
    for cls in Label:
        idx = [i for i, lab in enumerate(labels) if lab == cls]
        for j in range(len(idx) - 1, 0, -1):
            k = rng.randint(0, j)
            idx[j], idx[k] = idx[k], idx[j]
        n_test = int(round(len(idx) * test_fraction))
        for i in idx[:n_test]:
            splits[i] = "test"
    return splits


def generate_corpus(cfg: SynthConfig, n: int, out_dir, test_fraction: float = 0.2) -> dict:
    """Write ``n`` clips (half per class), sidecars and ``manifest.json``."""
    if n <= 0 or n % 2:
        raise ValueError(f"corpus size must be a positive even number, got {n}")
    out = Path(out_dir)
    clips_dir = out / "clips"
    try:
        clips_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create corpus directory {clips_dir}: {e}") from e
    labels = [Label.VIOLENT if i % 2 == 0 else Label.NONVIOLENT for i in range(n)]
    splits = stratified_split(labels, cfg.seed, test_fraction)
    entries = []
    for i, (label, split) in enumerate(zip(labels, splits)):
        seed = cfg.seed + i
        lc = generate_clip(cfg, label, seed)
        stem = f"{i:05d}"
        write_clip(clips_dir / f"{stem}.ssha", lc.clip)
        side = {"label": label.key, "gt_box": _box_list(lc.gt_box), "seed": seed}
        (clips_dir / f"{stem}.json").write_text(json.dumps(side, sort_keys=True) + "\n")
        entry = {"file": f"clips/{stem}.ssha", "label": label.key, "split": split, "seed": seed}
        if lc.gt_box is not None:
            entry["gt_box"] = _box_list(lc.gt_box)
        entries.append(entry)
    manifest = {"version": MANIFEST_VERSION, "config": cfg.to_dict(), "entries": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest


def _box_list(box: RegionBox | None):
    return None if box is None else list(box.as_tuple())


def manifest_hash(corpus_dir) -> str:
    return hashlib.sha256((Path(corpus_dir) / "manifest.json").read_bytes()).hexdigest()


class Corpus:
    """Read access to a generated corpus directory."""

    def __init__(self, root, cache_size: int = 2048):
        self.root = Path(root)
        path = self.root / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"no manifest.json in {self.root}")
        self.manifest = json.loads(path.read_text())
        self.config = SynthConfig.from_dict(self.manifest["config"])
        self.entries = self.manifest["entries"]
        self._load = lru_cache(maxsize=cache_size)(self._load_uncached)

    def __len__(self) -> int:
        return len(self.entries)

    def indices(self, split: str | None = None) -> list[int]:
        return [i for i, e in enumerate(self.entries) if split is None or e["split"] == split]

    def _load_uncached(self, i: int) -> LabeledClip:
        e = self.entries[i]
        clip = read_clip(self.root / e["file"])
        gt = e.get("gt_box")
        return LabeledClip(clip, Label.parse(e["label"]),
                           RegionBox(*gt) if gt else None, int(e["seed"]), name=e["file"])

    def get(self, i: int) -> LabeledClip:
        return self._load(i)

    def __getitem__(self, i: int) -> LabeledClip:
        return self.get(i)
