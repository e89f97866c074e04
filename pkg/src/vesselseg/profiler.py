"""Dataset quality profiling: per-frame image statistics and aggregation.

Red-intensity metrics (RI, RCC, CSI) are reported on the 8-bit 0-255 scale;
CV and VI are scale-free ratios. "Background" always means FOV tissue pixels
that are not annotated vessel; the black border outside the FOV never enters
any statistic. Luminance is the unweighted mean of R, G, B.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import DataError, UndefinedMetricError, VesselSegError
from .raster import BinaryMask, RasterImage, extract_fov, load_image, load_mask, read_manifest
from .skeleton import Branch, SkeletonGraph, skeletonize


@dataclass
class FrameProfile:
    """Quality metrics for one frame; vessel-dependent fields are None
    when no annotation was supplied or a metric was undefined."""

    frame: str = ""
    fov_ratio: float = math.nan
    vessel_ratio: float | None = None
    bg_ratio: float | None = None
    ri_overall: float | None = None
    ri_vessel: float | None = None
    ri_bg: float | None = None
    rcc: float | None = None
    csi: float | None = None
    ti: float | None = None
    n_ti_branches: int = 0
    n_ti_loops_excluded: int = 0
    bd: float | None = None
    cv: float | None = None
    vi: float | None = None


def _region_sets(img: RasterImage, vessels: BinaryMask):
    fov = img.fov.data
    v = vessels.data & fov
    bg = fov & ~v
    if not v.any():
        raise UndefinedMetricError("empty vessel set within FOV")
    if not bg.any():
        raise UndefinedMetricError("empty background within FOV")
    return v, bg


def red_channel_contrast(img: RasterImage, vessels: BinaryMask) -> float:
    """(R_vessel - R_background) / R_background, mean red on 0-255."""
    v, bg = _region_sets(img, vessels)
    red = img.data[..., 0] * 255.0
    r_v = float(red[v].mean())
    r_bg = float(red[bg].mean())
    if r_bg == 0.0:
        raise UndefinedMetricError("background red intensity is zero")
    return (r_v - r_bg) / r_bg


def color_separation_index(img: RasterImage, vessels: BinaryMask) -> float:
    """Euclidean distance between mean vessel and background RGB (0-255)."""
    v, bg = _region_sets(img, vessels)
    rgb = img.data * 255.0
    mu_v = rgb[v].mean(axis=0)
    mu_bg = rgb[bg].mean(axis=0)
    return float(np.linalg.norm(mu_v - mu_bg))


def tortuosity_index(branch: Branch | np.ndarray) -> float:
    """Path length over endpoint distance; >= 1 for any open pixel path.

    Steps count 1 (axial) or sqrt(2) (diagonal). Closed loops have no
    defined tortuosity and raise; callers exclude and tally them.
    """
    if isinstance(branch, np.ndarray):
        branch = Branch(branch)
    if len(branch.path) < 2:
        raise UndefinedMetricError("path needs at least 2 pixels")
    d = branch.endpoint_distance
    if branch.is_cycle or d == 0.0:
        raise UndefinedMetricError("closed loop has no endpoint distance")
    return branch.length / d


def branching_density(skel: SkeletonGraph) -> float:
    """Junctions per 100 px of skeleton length.

    Adjacent junction pixels merge into one junction (see
    SkeletonGraph.n_junctions); length is the summed branch chain length.
    """
    total = skel.total_length
    if total == 0.0:
        raise UndefinedMetricError("zero-length skeleton")
    return skel.n_junctions / total * 100.0


def _grid_block_means(lum: np.ndarray, sel: np.ndarray, fov: np.ndarray) -> list[float]:
    rows = np.flatnonzero(fov.any(axis=1))
    cols = np.flatnonzero(fov.any(axis=0))
    y0, y1 = rows[0], rows[-1] + 1
    x0, x1 = cols[0], cols[-1] + 1
    ye = np.linspace(y0, y1, 4).round().astype(int)
    xe = np.linspace(x0, x1, 4).round().astype(int)
    means = []
    for i in range(3):
        for j in range(3):
            blk = sel[ye[i]:ye[i + 1], xe[j]:xe[j + 1]]
            if blk.any():
                means.append(float(lum[ye[i]:ye[i + 1], xe[j]:xe[j + 1]][blk].mean()))
    return means


def coefficient_of_variation(img: RasterImage, region: BinaryMask | None = None) -> float:
    """Illumination spread: population std over mean of 3x3-grid block means.

    The grid is anchored to the FOV bounding box; block means use only FOV
    pixels (restricted further to ``region`` when given).
    """
    fov = img.fov.data
    if not fov.any():
        raise UndefinedMetricError("empty FOV")
    sel = fov if region is None else (fov & region.data)
    means = _grid_block_means(img.luminance(), sel, fov)
    if len(means) < 2:
        raise UndefinedMetricError("fewer than 2 grid blocks contain pixels")
    mu = float(np.mean(means))
    if mu == 0.0:
        raise UndefinedMetricError("zero mean block luminance")
    return float(np.std(means)) / mu


def vignetting_index(img: RasterImage, region: BinaryMask | None = None) -> float:
    """Center-to-periphery luminance drop (I_c - I_p) / I_c.

    Center: FOV pixels within 0.4 R of the FOV centroid; periphery: beyond
    0.75 R, where R is the largest centroid-to-FOV-pixel distance.
    """
    fov = img.fov.data
    if not fov.any():
        raise UndefinedMetricError("empty FOV")
    pix = np.argwhere(fov)
    centroid = pix.mean(axis=0)
    d = np.sqrt(((pix - centroid) ** 2).sum(axis=1))
    r = d.max()
    if r == 0.0:
        raise UndefinedMetricError("degenerate single-pixel FOV")
    sel = fov if region is None else (fov & region.data)
    lum = img.luminance()
    vals = lum[pix[:, 0], pix[:, 1]]
    inside = sel[pix[:, 0], pix[:, 1]]
    center = vals[(d <= 0.4 * r) & inside]
    periph = vals[(d > 0.75 * r) & inside]
    if center.size == 0 or periph.size == 0:
        raise UndefinedMetricError("empty center or periphery region")
    i_c = float(center.mean())
    if i_c == 0.0:
        raise UndefinedMetricError("zero center intensity")
    return (i_c - float(periph.mean())) / i_c


def profile_frame(img: RasterImage, vessels: BinaryMask | None = None, frame: str = "") -> FrameProfile:
    """All quality metrics for one frame. Vessel metrics need an annotation."""
    n = img.width * img.height
    fov = img.fov.data
    prof = FrameProfile(frame=frame, fov_ratio=fov.sum() / n * 100.0)
    lum_defined = fov.any()
    red = img.data[..., 0] * 255.0
    if lum_defined:
        prof.ri_overall = float(red[fov].mean())
        prof.cv = _maybe(coefficient_of_variation, img)
        prof.vi = _maybe(vignetting_index, img)
    if vessels is None:
        return prof
    if vessels.data.shape != fov.shape:
        raise DataError("annotation dimensions do not match image")
    v = vessels.data & fov
    bg = fov & ~v
    prof.vessel_ratio = v.sum() / n * 100.0
    prof.bg_ratio = bg.sum() / n * 100.0
    if v.any():
        prof.ri_vessel = float(red[v].mean())
    if bg.any():
        prof.ri_bg = float(red[bg].mean())
    prof.rcc = _maybe(red_channel_contrast, img, vessels)
    prof.csi = _maybe(color_separation_index, img, vessels)
    if v.any():
        graph = skeletonize(BinaryMask(v))
        prof.bd = _maybe(branching_density, graph)
        tis = []
        for b in graph.branches:
            try:
                tis.append(tortuosity_index(b))
            except UndefinedMetricError:
                prof.n_ti_loops_excluded += 1
        prof.n_ti_branches = len(tis)
        if tis:
            prof.ti = float(np.mean(tis))
    return prof


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


_AGG_FIELDS = [f.name for f in fields(FrameProfile) if f.name not in ("frame", "n_ti_branches", "n_ti_loops_excluded")]


@dataclass
class MetricsReport:
    """Per-frame profiles plus mean/std aggregates over defined frames."""

    per_frame: list[FrameProfile]
    errors: list[dict]

    def aggregate(self) -> dict:
        mean, std, count = {}, {}, {}
        for name in _AGG_FIELDS:
            vals = [getattr(p, name) for p in self.per_frame]
            vals = [v for v in vals if v is not None and not math.isnan(v)]
            count[name] = len(vals)
            if vals:
                mean[name] = float(np.mean(vals))
                std[name] = float(np.std(vals))
        # tortuosity pooled over every branch in the dataset, not per frame
        wsum = sum(p.ti * p.n_ti_branches for p in self.per_frame if p.ti is not None)
        nbr = sum(p.n_ti_branches for p in self.per_frame if p.ti is not None)
        out = {"mean": mean, "std": std, "count": count}
        out["ti_frame_mean"] = mean.get("ti")
        out["ti_branch_mean"] = wsum / nbr if nbr else None
        return out

    def to_dict(self) -> dict:
        return {
            "luminance": "mean-rgb",
            "intensity_scale": "0-255",
            "per_frame": [asdict(p) for p in self.per_frame],
            "aggregate": self.aggregate(),
            "errors": self.errors,
        }

    def write_json(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def write_csv(self, path) -> None:
        """Three-row layout (overall / vessel / background), mean and std
        columns per metric, blank where a metric is not defined for a row."""
        agg = self.aggregate()
        mean, std = agg["mean"], agg["std"]

        def cell(name, row_ok=True):
            if not row_ok or name not in mean:
                return ["", ""]
            return [f"{mean[name]:.4f}", f"{std[name]:.4f}"]

        rows = [
            ["region"] + [x for m in ("ratio", "ri", "rcc", "csi", "ti", "bd", "cv", "vi") for x in (m + "_mean", m + "_std")],
            ["overall"] + cell("fov_ratio") + cell("ri_overall") + cell("rcc") + cell("csi") + ["", ""] + ["", ""] + cell("cv") + cell("vi"),
            ["vessel"] + cell("vessel_ratio") + cell("ri_vessel") + ["", ""] + ["", ""] + cell("ti") + cell("bd") + ["", ""] + ["", ""],
            ["background"] + cell("bg_ratio") + cell("ri_bg") + ["", ""] + ["", ""] + ["", ""] + ["", ""] + ["", ""] + ["", ""],
        ]
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(rows)


def profile_dataset(manifest, luma_threshold: float = 0.04) -> MetricsReport:
    """Profile every frame listed in a manifest (path or entry list).

    Per-frame failures are recorded in the report instead of aborting.
    """
    entries = read_manifest(manifest) if not isinstance(manifest, list) else manifest
    profiles, errors = [], []
    for img_path, mask_path in entries:
        try:
            img = load_image(img_path)
            img = img.with_fov(extract_fov(img, luma_threshold))
            vessels = load_mask(mask_path) if mask_path is not None else None
            profiles.append(profile_frame(img, vessels, frame=str(img_path)))
        except VesselSegError as e:
            errors.append({"frame": str(img_path), "error": str(e)})
    return MetricsReport(per_frame=profiles, errors=errors)
