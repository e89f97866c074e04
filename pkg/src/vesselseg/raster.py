"""Image and mask containers, FOV extraction, and lossless PNG I/O.

All intensities live in [0, 1] internally. Metrics that are reported on the
8-bit 0-255 scale rescale at the reporting boundary. File naming convention:
``<stem>.png`` (RGB frame), ``<stem>_mask.png`` (binary mask),
``<stem>_prob.png`` (probability map).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import DataError

EIGHT_CONN = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class BinaryMask:
    """Per-pixel boolean mask, shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=bool)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise DataError(f"mask must be 2-D and nonempty, got shape {d.shape}")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def population(self) -> int:
        return int(self.data.sum())

    @property
    def is_empty(self) -> bool:
        return not self.data.any()


@dataclass(frozen=True)
class ProbMap:
    """Per-pixel probability in [0, 1], shape (height, width).

    Values are clamped into [0, 1] on construction.
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise DataError(f"probmap must be 2-D and nonempty, got shape {d.shape}")
        if not np.isfinite(d).all():
            raise DataError("probmap contains non-finite values")
        object.__setattr__(self, "data", np.clip(d, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def binarize(self, threshold: float = 0.5) -> BinaryMask:
        return BinaryMask(self.data >= threshold)


@dataclass(frozen=True)
class RasterImage:
    """RGB frame with intensities in [0, 1] and an FOV mask.

    ``from_8bit`` marks frames decoded from 8-bit sources, for which the
    round trip x -> round(255 x) / 255 is an exact identity.
    """

    data: np.ndarray
    fov: BinaryMask = None
    from_8bit: bool = False

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3 or d.shape[2] != 3 or d.shape[0] < 1 or d.shape[1] < 1:
            raise DataError(f"image must be (H, W, 3), got shape {d.shape}")
        if not np.isfinite(d).all():
            raise DataError("image contains non-finite values")
        if d.min() < 0.0 or d.max() > 1.0:
            raise DataError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", d)
        fov = self.fov if self.fov is not None else BinaryMask(np.ones(d.shape[:2], bool))
        if fov.data.shape != d.shape[:2]:
            raise DataError("fov dimensions must equal image dimensions")
        object.__setattr__(self, "fov", fov)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def with_fov(self, fov: BinaryMask) -> "RasterImage":
        return RasterImage(self.data, fov=fov, from_8bit=self.from_8bit)

    def luminance(self) -> np.ndarray:
        """Unweighted mean of R, G, B per pixel."""
        return self.data.mean(axis=2)


def load_image(path) -> RasterImage:
    """Load an 8-bit RGB raster; FOV is initialized to all-true."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise DataError(f"{path}: expected 8-bit RGB, got mode {im.mode!r}")
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as e:
        raise DataError(f"{path}: not a decodable raster image") from e
    except OSError as e:
        raise DataError(f"{path}: decode failed ({e})") from e
    return RasterImage(arr.astype(np.float32) / 255.0, from_8bit=True)


def save_image(img: RasterImage, path) -> None:
    """Write an RGB frame as 8-bit PNG (values rounded to 1/255 steps)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.rint(img.data * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def save_mask(mask: BinaryMask, path) -> None:
    """Write a binary mask as 8-bit grayscale PNG with values {0, 255}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.where(mask.data, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_mask(path) -> BinaryMask:
    """Load a mask saved by :func:`save_mask`. Exact round trip."""
    arr = _load_gray(path)
    return BinaryMask(arr >= 128)


def save_probmap(pm: ProbMap, path) -> None:
    """Write a probability map as 8-bit grayscale PNG, p -> round(255 p)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.rint(pm.data * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_probmap(path) -> ProbMap:
    """Load a probability map; quantization error is at most 1/510."""
    arr = _load_gray(path)
    return ProbMap(arr.astype(np.float32) / 255.0)


def _load_gray(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise DataError(f"{path}: expected 8-bit grayscale, got mode {im.mode!r}")
            return np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as e:
        raise DataError(f"{path}: not a decodable raster image") from e
    except OSError as e:
        raise DataError(f"{path}: decode failed ({e})") from e


def extract_fov(img: RasterImage, luma_threshold: float = 0.04) -> BinaryMask:
    """Field-of-view mask: the largest connected bright region.

    Mean-RGB luminance is thresholded, one 3x3 morphological closing pass is
    applied (edge-safe: the erosion half treats out-of-frame as foreground),
    and the largest 8-connected component is kept. An all-dark frame yields
    an empty mask (check ``mask.is_empty``).
    """
    if not 0.0 <= luma_threshold <= 1.0:
        raise DataError(f"luma_threshold must be in [0, 1], got {luma_threshold}")
    bright = img.luminance() > luma_threshold
    dil = ndimage.binary_dilation(bright, structure=EIGHT_CONN, border_value=0)
    closed = ndimage.binary_erosion(dil, structure=EIGHT_CONN, border_value=1)
    labels, n = ndimage.label(closed, structure=EIGHT_CONN)
    if n == 0:
        return BinaryMask(np.zeros_like(bright))
    sizes = np.bincount(labels.ravel())[1:]
    return BinaryMask(labels == (int(np.argmax(sizes)) + 1))


def read_manifest(path) -> list[tuple[Path, Path | None]]:
    """Parse a dataset manifest: one ``image_path[,mask_path]`` line per entry.

    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such manifest: {path}")
    base = path.parent
    entries: list[tuple[Path, Path | None]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            img = _resolve(row[0].strip(), base)
            msk = _resolve(row[1].strip(), base) if len(row) > 1 and row[1].strip() else None
            entries.append((img, msk))
    return entries


def write_manifest(entries, path) -> None:
    """Inverse of :func:`read_manifest`; paths are written as given."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for img, msk in entries:
            w.writerow([str(img)] if msk is None else [str(img), str(msk)])


def _resolve(p: str, base: Path) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q
