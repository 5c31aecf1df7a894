"""Deterministic synthetic image sets for demos and desk-scale experiments."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def make_image(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """One synthetic RGB image mixing gradients, sinusoids, blobs, and boxes."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    yy /= height
    xx /= width
    img = np.zeros((height, width, 3), dtype=np.float32)
    base = rng.uniform(0.2, 0.8, size=3)
    tilt = rng.uniform(-0.4, 0.4, size=(2, 3))
    for c in range(3):
        img[..., c] = base[c] + tilt[0, c] * yy + tilt[1, c] * xx
    for _ in range(rng.integers(1, 4)):
        fy, fx = rng.uniform(2, 14, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.05, 0.2)
        wave = amp * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
        img[..., rng.integers(3)] += wave
    for _ in range(rng.integers(2, 6)):
        cy, cx = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.05, 0.3)
        blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r)))
        img += rng.uniform(-0.3, 0.3, size=3) * blob[..., None]
    for _ in range(rng.integers(1, 4)):
        y0, x0 = rng.integers(0, height // 2), rng.integers(0, width // 2)
        hh = rng.integers(height // 8, height // 2)
        ww = rng.integers(width // 8, width // 2)
        img[y0:y0 + hh, x0:x0 + ww] += rng.uniform(-0.25, 0.25, size=3)
    img += rng.normal(0, 0.01, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def make_toy_images(directory, count: int, size=(160, 160), seed: int = 0) -> list:
    """Write ``count`` synthetic PNGs; returns the file paths (sorted order)."""
    rng = np.random.default_rng(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        arr = make_image(rng, size[0], size[1])
        path = directory / f"img{i:04d}.png"
        Image.fromarray((arr * 255).astype(np.uint8)).save(path)
        paths.append(path)
    return paths
