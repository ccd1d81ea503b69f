"""Trajectory logs and their PPM visualization."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensorcore import RegionBox, pixel_rect

# 3x5 glyphs, rows top to bottom, '#' = on
_GLYPHS = {
    "0": ["###", "#.#", "#.#", "#.#", "###"],
    "1": [".#.", "##.", ".#.", ".#.", "###"],
    "2": ["###", "..#", "###", "#..", "###"],
    "3": ["###", "..#", "###", "..#", "###"],
    "4": ["#.#", "#.#", "###", "..#", "..#"],
    "5": ["###", "#..", "###", "..#", "###"],
    "6": ["###", "#..", "###", "#.#", "###"],
    "7": ["###", "..#", "..#", "..#", "..#"],
    "8": ["###", "#.#", "###", "#.#", "###"],
    "9": ["###", "#.#", "###", "..#", "###"],
    "S": ["###", "#..", "###", "..#", "###"],
    "R": ["##.", "#.#", "##.", "#.#", "#.#"],
    "C": ["###", "#..", "#..", "#..", "###"],
    "V": ["#.#", "#.#", "#.#", "#.#", ".#."],
    "N": ["#.#", "###", "###", "#.#", "#.#"],
    " ": ["...", "...", "...", "...", "..."],
}

BOX_COLOR = (255, 40, 40)
STRIP_HEIGHT = 9


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8)[: h * w * 3].reshape(h, w, 3)


def draw_text(img: np.ndarray, text: str, x: int, y: int, color=(255, 255, 255), scale: int = 1):
    for ch in text.upper():
        glyph = _GLYPHS.get(ch, _GLYPHS[" "])
        for r, row in enumerate(glyph):
            for c, on in enumerate(row):
                if on == "#":
                    y0, x0 = y + r * scale, x + c * scale
                    img[y0:y0 + scale, x0:x0 + scale] = color
        x += 4 * scale
    return img


def draw_box(img: np.ndarray, box: RegionBox, color=BOX_COLOR, width: int = 2) -> np.ndarray:
    h, w = img.shape[:2]
    x0, y0, x1, y1 = pixel_rect(box, h, w)
    img[y0:y0 + width, x0:x1] = color
    img[max(y1 - width, y0):y1, x0:x1] = color
    img[y0:y1, x0:x0 + width] = color
    img[y0:y1, max(x1 - width, x0):x1] = color
    return img


def action_label(record: dict) -> str:
    name = record.get("action_name", "")
    if name.startswith("R"):
        return name
    if name:
        return "CV" if name == "Cviolent" else "CN"
    return str(record["action"])


def annotate_frame(frame: np.ndarray, record: dict) -> np.ndarray:
    """The frame with the record's attention box and a ``S<step> <action>``
    strip burned into the top-left corner."""
    img = np.array(frame, dtype=np.uint8, copy=True)
    draw_box(img, RegionBox(*record["box"]))
    text = f"S{record['step']} {action_label(record)}"
    img[:STRIP_HEIGHT, : 4 * len(text) + 3] = 0
    draw_text(img, text, 2, 2)
    return img


def load_trace(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def annotate_trace(trace: list[dict], corpus, out_dir) -> list[Path]:
    """One PPM per trace record, showing the middle source frame of the
    record's clip."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_file = {e["file"]: i for i, e in enumerate(corpus.entries)}
    paths = []
    for k, rec in enumerate(trace):
        name = rec.get("clip")
        if name not in by_file:
            raise FileNotFoundError(f"trace references unknown clip {name!r}")
        frames = corpus.get(by_file[name]).clip.frames
        img = annotate_frame(frames[frames.shape[0] // 2], rec)
        p = out / f"ep{rec['episode']:05d}_step{rec['step']}.ppm"
        write_ppm(p, img)
        paths.append(p)
    return paths
