"""Procedural vessel-tree frames with exact masks.

Each frame composites branching dark-red curves (widths roughly 1-4 px,
two to three junction levels, thick trunks thinning toward the leaves) over
a textured, mildly vignetted background. The mask is exactly the set of
painted vessel pixels, so ground truth is correct by construction and the
whole corpus is a pure function of the seed.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .corrupt import frame_rng
from .raster import BinaryMask, RasterImage


def _stamp_curve(canvas: np.ndarray, p0, p1, ctrl, width: float) -> None:
    """Rasterize a quadratic Bezier by stamping disks of diameter ``width``."""
    h, w = canvas.shape
    n = max(int(3 * max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))), 8)
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = (1 - t) ** 2 * np.asarray(p0) + 2 * t * (1 - t) * np.asarray(ctrl) + t**2 * np.asarray(p1)
    r = width / 2.0
    rc = max(int(np.ceil(r)), 1)
    dy, dx = np.mgrid[-rc : rc + 1, -rc : rc + 1]
    disk = np.argwhere(dy**2 + dx**2 <= r**2) - rc
    cells = np.rint(pts).astype(int)[:, None, :] + disk[None, :, :]
    cells = cells.reshape(-1, 2)
    ok = (cells[:, 0] >= 0) & (cells[:, 0] < h) & (cells[:, 1] >= 0) & (cells[:, 1] < w)
    canvas[cells[ok, 0], cells[ok, 1]] = True


def _grow_tree(mask: np.ndarray, rng: np.random.Generator, start, angle: float,
               length: float, width: float, level: int, max_level: int) -> None:
    h, _ = mask.shape
    end = (start[0] + length * np.sin(angle), start[1] + length * np.cos(angle))
    mid = ((start[0] + end[0]) / 2.0, (start[1] + end[1]) / 2.0)
    bow = length * rng.uniform(0.1, 0.3) * rng.choice((-1.0, 1.0))
    ctrl = (mid[0] + bow * np.cos(angle), mid[1] - bow * np.sin(angle))
    _stamp_curve(mask, start, end, ctrl, width)
    if level >= max_level:
        return
    # fork at the tip; a mid-trunk side branch keeps interior segments common
    for sign in (-1.0, 1.0):
        a = angle + sign * rng.uniform(0.35, 0.9)
        _grow_tree(mask, rng, end, a, length * rng.uniform(0.5, 0.75),
                   max(width * 0.65, 1.0), level + 1, max_level)
    if level == 0 and rng.random() < 0.8:
        a = angle + rng.choice((-1.0, 1.0)) * rng.uniform(0.6, 1.1)
        _grow_tree(mask, rng, ctrl, a, length * rng.uniform(0.45, 0.7),
                   max(width * 0.7, 1.0), level + 1, max_level)


def _vessel_mask(rng: np.random.Generator, size: int, levels: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(2, 4))):
        edge = rng.integers(4)
        pos = rng.uniform(0.2, 0.8) * size
        starts = [(2.0, pos), (size - 3.0, pos), (pos, 2.0), (pos, size - 3.0)]
        inward = [np.pi / 2, -np.pi / 2, 0.0, np.pi]
        angle = inward[edge] + rng.uniform(-0.5, 0.5)
        _grow_tree(mask, rng, starts[edge], angle,
                   length=size * rng.uniform(0.35, 0.55),
                   width=rng.uniform(2.6, 3.8), level=0, max_level=levels)
    return mask


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = np.array([0.70, 0.48, 0.48]) + rng.normal(0.0, 0.03, size=3)
    grid = rng.uniform(-1.0, 1.0, size=(6, 6))
    tex = ndimage.zoom(grid, size / 6.0, order=1, mode="nearest", grid_mode=True)[:size, :size]
    img = base[None, None, :] * (1.0 + 0.06 * tex[..., None])
    yy, xx = np.mgrid[:size, :size]
    c = (size - 1) / 2.0
    r2 = ((yy - c) ** 2 + (xx - c) ** 2) / (2 * c**2)
    img = img * (1.0 - rng.uniform(0.1, 0.3) * r2)[..., None]
    img = img + rng.normal(0.0, 0.012, size=img.shape)
    return img


def synth_frame(rng: np.random.Generator, size: int = 64, levels: int = 2) -> tuple[RasterImage, BinaryMask]:
    """One textured frame plus its exact vessel mask."""
    img = _background(rng, size)
    mask = _vessel_mask(rng, size, levels)
    color = np.array([0.40, 0.14, 0.14]) + rng.normal(0.0, 0.02, size=3)
    alpha = 0.85
    img[mask] = (1.0 - alpha) * img[mask] + alpha * color
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return RasterImage(img), BinaryMask(mask)


def make_synthetic_dataset(n: int, size: int = 64, seed: int = 0,
                           levels: int = 2) -> list[tuple[RasterImage, BinaryMask]]:
    """Deterministic corpus of ``n`` labeled frames.

    ``levels`` counts junction levels per tree: every tree forks at least
    once for levels >= 1, and interior junction-to-junction segments appear
    from the mid-trunk side branches and tree crossings.
    """
    return [synth_frame(frame_rng(seed, i), size=size, levels=levels) for i in range(n)]
