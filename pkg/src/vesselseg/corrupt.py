"""Physics-aware corruption engine: synthetic bubbles, photometric jitter,
and local contrast fade, with replayable per-frame provenance.

Every sampled parameter comes from an explicit numpy Generator, so a given
(image, spec, seed) triple always produces a bit-identical output. The
dataset driver derives one independent stream per frame, which keeps
parallel corruption order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .raster import RasterImage


@dataclass(frozen=True)
class CorruptionSpec:
    """Sampling ranges for the three corruption families (all inclusive)."""

    bubble_count: tuple[int, int] = (2, 6)
    bubble_axes: tuple[float, float] = (4.0, 24.0)
    vignette_strength: tuple[float, float] = (0.0, 0.45)
    gain: tuple[float, float] = (0.7, 1.3)
    contrast_strength: tuple[float, float] = (0.1, 0.4)
    contrast_patch: int = 9
    seed: int = 42

    def __post_init__(self):
        for name in ("bubble_count", "bubble_axes", "vignette_strength", "gain", "contrast_strength"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: low {lo} > high {hi}")
        if self.bubble_count[0] < 0 or self.bubble_axes[0] <= 0:
            raise ConfigError("bubble count must be >= 0 and axes > 0")
        if self.contrast_patch < 1 or self.contrast_patch % 2 == 0:
            raise ConfigError("contrast_patch must be an odd positive window size")
        if not (0.0 <= self.contrast_strength[0] and self.contrast_strength[1] <= 1.0):
            raise ConfigError("contrast_strength must stay within [0, 1]")


def frame_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for frame ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


# --- synthetic bubbles -------------------------------------------------------

def sample_bubbles(spec: CorruptionSpec, rng: np.random.Generator, fov: np.ndarray) -> list[dict]:
    n = int(rng.integers(spec.bubble_count[0], spec.bubble_count[1] + 1))
    pix = np.argwhere(fov)
    if len(pix) == 0:
        return []
    out = []
    for _ in range(n):
        cy, cx = pix[int(rng.integers(len(pix)))]
        a, b = rng.uniform(spec.bubble_axes[0], spec.bubble_axes[1], size=2)
        out.append({
            "center": (int(cy), int(cx)),
            "axes": (float(a), float(b)),
            "angle": float(rng.uniform(0.0, np.pi)),
            "interior_alpha": float(rng.uniform(0.15, 0.45)),
            "interior_gain": float(rng.uniform(0.5, 0.8)),
            "rim_alpha": float(rng.uniform(0.6, 0.9)),
        })
    return out


def apply_bubbles(img: RasterImage, bubbles: list[dict]) -> RasterImage:
    if not bubbles:
        return img
    data = img.data.copy()
    fov = img.fov.data
    h, w = fov.shape
    yy, xx = np.mgrid[:h, :w]
    for bub in bubbles:
        cy, cx = bub["center"]
        a, b = bub["axes"]
        ct, st = np.cos(bub["angle"]), np.sin(bub["angle"])
        dy, dx = yy - cy, xx - cx
        u = (dx * ct + dy * st) / a
        v = (-dx * st + dy * ct) / b
        rho2 = u * u + v * v
        interior = (rho2 < 0.64) & fov           # rho < 0.8
        rim = (rho2 >= 0.64) & (rho2 <= 1.0) & fov
        al, g = bub["interior_alpha"], bub["interior_gain"]
        data[interior] = (1.0 - al) * data[interior] + al * g * data[interior]
        ra = bub["rim_alpha"]
        data[rim] = (1.0 - ra) * data[rim] + ra * 1.0
    return RasterImage(np.clip(data, 0.0, 1.0), fov=img.fov)


def add_bubbles(img: RasterImage, spec: CorruptionSpec, rng: np.random.Generator) -> RasterImage:
    """Stamp random elliptical occlusions: bright specular rim around a
    semi-transparent darkened interior. Pixels outside the FOV never change."""
    return apply_bubbles(img, sample_bubbles(spec, rng, img.fov.data))


# --- photometric: gain + radial vignette -------------------------------------

def sample_photometric(spec: CorruptionSpec, rng: np.random.Generator) -> dict:
    return {
        "gain": float(rng.uniform(spec.gain[0], spec.gain[1])),
        "vignette": float(rng.uniform(spec.vignette_strength[0], spec.vignette_strength[1])),
    }


def _radial_sq(img: RasterImage) -> np.ndarray:
    """(r / R)^2 from the FOV centroid, R the farthest FOV pixel."""
    fov = img.fov.data
    h, w = fov.shape
    if fov.any():
        pix = np.argwhere(fov)
        cy, cx = pix.mean(axis=0)
        r_max2 = (((pix - (cy, cx)) ** 2).sum(axis=1)).max()
    else:
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        r_max2 = cy**2 + cx**2
    if r_max2 == 0.0:
        return np.zeros((h, w))
    yy, xx = np.mgrid[:h, :w]
    return ((yy - cy) ** 2 + (xx - cx) ** 2) / r_max2


def apply_photometric(img: RasterImage, params: dict) -> RasterImage:
    factor = params["gain"] * (1.0 - params["vignette"] * _radial_sq(img))
    return RasterImage(np.clip(img.data * factor[..., None], 0.0, 1.0).astype(np.float32), fov=img.fov)


def photometric_jitter(img: RasterImage, spec: CorruptionSpec, rng: np.random.Generator) -> RasterImage:
    """Global gain then quadratic radial vignette, clamped to [0, 1]."""
    return apply_photometric(img, sample_photometric(spec, rng))


# --- local contrast fade ------------------------------------------------------

_FIELD_GRID = 4  # control points per axis for the smooth strength field


def sample_contrast(spec: CorruptionSpec, rng: np.random.Generator) -> dict:
    grid = rng.uniform(spec.contrast_strength[0], spec.contrast_strength[1], size=(_FIELD_GRID, _FIELD_GRID))
    return {"grid": grid.tolist(), "window": spec.contrast_patch}


def _upsample_field(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    zy = h / grid.shape[0]
    zx = w / grid.shape[1]
    field = ndimage.zoom(grid, (zy, zx), order=1, mode="nearest", grid_mode=True)
    return field[:h, :w]


def apply_contrast(img: RasterImage, params: dict) -> RasterImage:
    window = int(params["window"])
    grid = np.asarray(params["grid"], dtype=np.float64)
    s = _upsample_field(grid, img.height, img.width)[..., None]
    blur = ndimage.uniform_filter(img.data.astype(np.float64), size=(window, window, 1), mode="reflect")
    out = (1.0 - s) * img.data + s * blur
    return RasterImage(np.clip(out, 0.0, 1.0).astype(np.float32), fov=img.fov)


def reduce_local_contrast(img: RasterImage, spec: CorruptionSpec, rng: np.random.Generator) -> RasterImage:
    """Blend each pixel toward its box-filtered local mean with a spatially
    smooth random strength field."""
    return apply_contrast(img, sample_contrast(spec, rng))


# --- full pipeline ------------------------------------------------------------

_ORDER = ("bubbles", "photometric", "contrast")


def corrupt(img: RasterImage, spec: CorruptionSpec, rng: np.random.Generator | None = None,
            mode: str = "joint") -> tuple[RasterImage, dict]:
    """Corrupt one frame and return (degraded image, provenance record).

    ``joint`` applies bubbles, then photometric jitter, then contrast fade;
    ``single`` picks one family uniformly. The provenance holds every sampled
    parameter, sufficient to replay the exact corruption via ``replay``.
    """
    if mode not in ("joint", "single"):
        raise ConfigError(f"mode must be 'joint' or 'single', got {mode!r}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    prov = {
        "mode": mode,
        "bubbles": sample_bubbles(spec, rng, img.fov.data),
        "photometric": sample_photometric(spec, rng),
        "contrast": sample_contrast(spec, rng),
    }
    if mode == "single":
        prov["applied"] = [_ORDER[int(rng.integers(3))]]
    else:
        prov["applied"] = list(_ORDER)
    return replay(img, prov), prov


def replay(img: RasterImage, provenance: dict) -> RasterImage:
    """Re-apply a recorded corruption exactly."""
    out = img
    for stage in provenance["applied"]:
        if stage == "bubbles":
            out = apply_bubbles(out, provenance["bubbles"])
        elif stage == "photometric":
            out = apply_photometric(out, provenance["photometric"])
        elif stage == "contrast":
            out = apply_contrast(out, provenance["contrast"])
    return out
