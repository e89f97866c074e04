"""Skeletonization, skeleton-graph analysis, and topology-aware target pruning.

The thinning pass is Zhang-Suen (8-connectivity) with two deterministic
fix-ups so the documented invariants hold on arbitrary masks:

* components that parallel thinning erases entirely are restored as their
  deepest (max distance-transform) pixel;
* surviving 2x2 blocks are broken by removing locally simple pixels, so the
  skeleton is strictly one pixel wide.

A :class:`SkeletonGraph` decomposes the skeleton into node pixels (degree
!= 2 under 8-neighbor counting) and branches (maximal chains of degree-2
pixels, plus direct node-node adjacencies). Branch length is the Euclidean
chain length: 1 per axial step, sqrt(2) per diagonal step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .raster import EIGHT_CONN, BinaryMask

# 8-neighborhood in clockwise ring order starting north: N, NE, E, SE, S, SW, W, NW
_RING = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
_DEGREE_KERNEL = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]], dtype=np.int32)


@dataclass(frozen=True)
class Branch:
    """Ordered pixel path between two node pixels (or a closed cycle).

    ``path`` includes the node pixels at both ends; interior pixels all have
    degree 2. For a cycle, ``path`` starts and ends on the same pixel.
    """

    path: np.ndarray
    is_cycle: bool = False

    @property
    def length(self) -> float:
        steps = np.diff(self.path.astype(np.float64), axis=0)
        return float(np.sqrt((steps**2).sum(axis=1)).sum())

    @property
    def endpoint_distance(self) -> float:
        d = self.path[-1].astype(np.float64) - self.path[0].astype(np.float64)
        return float(math.hypot(d[0], d[1]))


@dataclass(frozen=True)
class SkeletonGraph:
    """One-pixel-wide skeleton with degrees, per-pixel radius, and branches."""

    skel: np.ndarray
    degree: np.ndarray
    radius: np.ndarray
    branches: list[Branch] = field(default_factory=list)

    @property
    def pixels(self) -> np.ndarray:
        """Skeleton pixel coordinates, (n, 2) as (row, col), raster order."""
        return np.argwhere(self.skel)

    @property
    def junction_pixels(self) -> np.ndarray:
        """Pixels with 8-neighbor degree >= 3, (n, 2)."""
        return np.argwhere(self.skel & (self.degree >= 3))

    @property
    def endpoints(self) -> np.ndarray:
        return np.argwhere(self.skel & (self.degree == 1))

    @property
    def n_junctions(self) -> int:
        """Junction count with adjacent junction pixels merged.

        An axial crossing of two 1-px lines produces five pixels of degree
        >= 3 that form one 8-connected cluster; it counts as one junction.
        """
        _, n = ndimage.label(self.skel & (self.degree >= 3), structure=EIGHT_CONN)
        return int(n)

    @property
    def is_empty(self) -> bool:
        return not self.skel.any()

    @property
    def total_length(self) -> float:
        return float(sum(b.length for b in self.branches))

    def components(self) -> tuple[np.ndarray, int]:
        return ndimage.label(self.skel, structure=EIGHT_CONN)

    def component_lengths(self) -> dict[int, float]:
        """Total branch length per 8-connected skeleton component."""
        labels, n = self.components()
        lengths = {i: 0.0 for i in range(1, n + 1)}
        for b in self.branches:
            lengths[int(labels[tuple(b.path[0])])] += b.length
        return lengths


def _neighbor_slices(padded):
    c = padded[1:-1, 1:-1]
    ring = [
        padded[:-2, 1:-1], padded[:-2, 2:], padded[1:-1, 2:], padded[2:, 2:],
        padded[2:, 1:-1], padded[2:, :-2], padded[1:-1, :-2], padded[:-2, :-2],
    ]
    return c, ring


def _zhang_suen(mask: np.ndarray) -> np.ndarray:
    img = np.pad(mask.astype(np.uint8), 1)
    while True:
        changed = False
        for step in (0, 1):
            c, ring = _neighbor_slices(img)
            p2, p3, p4, p5, p6, p7, p8, p9 = ring
            b = sum(ring)
            seq = ring + [p2]
            a = sum(((seq[i] == 0) & (seq[i + 1] == 1)).astype(np.uint8) for i in range(8))
            cond = (c == 1) & (b >= 2) & (b <= 6) & (a == 1)
            if step == 0:
                cond &= (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                cond &= (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            if cond.any():
                changed = True
                img[1:-1, 1:-1][cond] = 0
        if not changed:
            return img[1:-1, 1:-1].astype(bool)


def _is_simple(skel, y, x) -> bool:
    """True when removing (y, x) preserves local 8-connectivity.

    The foreground of the 3x3 neighborhood (center excluded) must form a
    single 8-connected component, and at least one 4-neighbor must be
    background so no hole is created.
    """
    patch = np.zeros((3, 3), dtype=bool)
    h, w = skel.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            ny, nx = y + dy, x + dx
            if (dy or dx) and 0 <= ny < h and 0 <= nx < w:
                patch[dy + 1, dx + 1] = skel[ny, nx]
    _, n = ndimage.label(patch, structure=EIGHT_CONN)
    bg4 = not (patch[0, 1] and patch[1, 0] and patch[1, 2] and patch[2, 1])
    return n == 1 and bg4


def _break_squares(skel: np.ndarray) -> np.ndarray:
    """Remove locally simple pixels until no 2x2 block is fully set."""
    skel = skel.copy()
    for _ in range(8):
        blocks = skel[:-1, :-1] & skel[1:, :-1] & skel[:-1, 1:] & skel[1:, 1:]
        if not blocks.any():
            break
        removed = False
        for by, bx in np.argwhere(blocks):
            for y, x in ((by, bx), (by, bx + 1), (by + 1, bx), (by + 1, bx + 1)):
                if not skel[y, x]:
                    break  # an earlier removal already opened this block
                if sum(_ring_values(skel, y, x)) >= 2 and _is_simple(skel, y, x):
                    skel[y, x] = False
                    removed = True
                    break
        if not removed:
            break  # remaining blocks are irreducible without disconnecting
    return skel


def _ring_values(img, y, x):
    h, w = img.shape
    vals = []
    for dy, dx in _RING:
        ny, nx = y + dy, x + dx
        vals.append(bool(img[ny, nx]) if 0 <= ny < h and 0 <= nx < w else False)
    return vals


def _extend_tips(skel: np.ndarray, mask: np.ndarray, edt: np.ndarray) -> np.ndarray:
    """Re-grow skeleton endpoints into the cap erosion left by thinning.

    Each endpoint advances along its local direction (allowing 45-degree
    turns) while staying inside the mask and touching exactly one skeleton
    pixel, for at most ceil(EDT(tip)) steps. Components shorter than twice
    their tip radius are blob-like and left untouched.
    """
    skel = skel.copy()
    h, w = skel.shape
    labels, n = ndimage.label(skel, structure=EIGHT_CONN)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    degree = _compute_degree(skel)
    for y, x in np.argwhere(skel & (degree == 1)):
        cap = int(np.ceil(edt[y, x]))
        if sizes[labels[y, x]] <= 2 * cap:
            continue
        prev = tuple(_skel_neighbors(skel, y, x)[0])
        cur = (y, x)
        for _ in range(cap):
            d = (cur[0] - prev[0], cur[1] - prev[1])
            i = _RING.index(d)
            placed = False
            for j in (i, (i - 1) % 8, (i + 1) % 8):
                dy, dx = _RING[j]
                c = (cur[0] + dy, cur[1] + dx)
                if not (0 <= c[0] < h and 0 <= c[1] < w):
                    continue
                if not mask[c] or skel[c]:
                    continue
                if len(_skel_neighbors(skel, *c)) != 1:
                    continue
                skel[c] = True
                prev, cur = cur, c
                placed = True
                break
            if not placed:
                break
    return skel


def _restore_lost_components(skel: np.ndarray, mask: np.ndarray, edt: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(mask, structure=EIGHT_CONN)
    if n == 0:
        return skel
    present = np.zeros(n + 1, dtype=bool)
    present[labels[skel]] = True
    for i in range(1, n + 1):
        if not present[i]:
            sel = labels == i
            flat = int(np.argmax(np.where(sel, edt, -1.0)))
            skel[np.unravel_index(flat, skel.shape)] = True
    return skel


def _compute_degree(skel: np.ndarray) -> np.ndarray:
    deg = ndimage.convolve(skel.astype(np.int32), _DEGREE_KERNEL, mode="constant", cval=0)
    deg[~skel] = 0
    return deg


def _skel_neighbors(skel, y, x):
    h, w = skel.shape
    out = []
    for dy, dx in _RING:
        ny, nx = y + dy, x + dx
        if 0 <= ny < h and 0 <= nx < w and skel[ny, nx]:
            out.append((ny, nx))
    return out


def _trace_branches(skel: np.ndarray, degree: np.ndarray) -> list[Branch]:
    branches: list[Branch] = []
    consumed = np.zeros_like(skel)  # degree-2 pixels already assigned to a branch
    node_mask = skel & (degree != 2)

    for y, x in np.argwhere(node_mask):
        for ny, nx in _skel_neighbors(skel, y, x):
            if node_mask[ny, nx]:
                if (ny, nx) > (y, x):  # dedup undirected node-node edges
                    branches.append(Branch(np.array([(y, x), (ny, nx)])))
                continue
            if consumed[ny, nx]:
                continue
            path = [(y, x), (ny, nx)]
            consumed[ny, nx] = True
            prev, cur = (y, x), (ny, nx)
            while degree[cur] == 2:
                nxt = next(p for p in _skel_neighbors(skel, *cur) if p != prev)
                if node_mask[nxt]:
                    path.append(nxt)
                    break
                path.append(nxt)
                consumed[nxt] = True
                prev, cur = cur, nxt
            branches.append(Branch(np.array(path)))

    # pure cycles: components made only of degree-2 pixels
    for y, x in np.argwhere(skel & (degree == 2) & ~consumed & ~node_mask):
        if consumed[y, x]:
            continue
        path = [(y, x)]
        consumed[y, x] = True
        prev, cur = None, (y, x)
        while True:
            step = [p for p in _skel_neighbors(skel, *cur) if p != prev]
            nxt = step[0]
            if nxt == (y, x):
                path.append(nxt)
                break
            path.append(nxt)
            consumed[nxt] = True
            prev, cur = cur, nxt
        branches.append(Branch(np.array(path), is_cycle=True))
    return branches


def _build_graph(skel: np.ndarray, radius: np.ndarray) -> SkeletonGraph:
    degree = _compute_degree(skel)
    branches = _trace_branches(skel, degree)
    return SkeletonGraph(skel=skel, degree=degree, radius=np.where(skel, radius, 0.0), branches=branches)


def skeletonize(mask: BinaryMask) -> SkeletonGraph:
    """Thin a mask to a 1-px skeleton graph carrying per-pixel radius.

    Component count is preserved exactly; radius is the exact Euclidean
    distance transform of the source mask sampled on the skeleton.
    """
    m = mask.data
    if not m.any():
        z = np.zeros_like(m)
        return SkeletonGraph(skel=z, degree=np.zeros(m.shape, np.int32), radius=np.zeros(m.shape, np.float32))
    edt = ndimage.distance_transform_edt(m)
    skel = _zhang_suen(m)
    skel = _restore_lost_components(skel, m, edt)
    skel = _break_squares(skel)
    skel = _extend_tips(skel, m, edt)
    return _build_graph(skel, edt.astype(np.float32))


def _terminal_branch_pixels(graph: SkeletonGraph) -> np.ndarray:
    """Pixels of every endpoint-to-junction branch, junction end excluded.

    Only components that contain at least one junction contribute; simple
    open curves and cycles are exempt.
    """
    labels, n = graph.components()
    has_junction = np.zeros(n + 1, dtype=bool)
    jc = graph.junction_pixels
    if len(jc):
        has_junction[labels[jc[:, 0], jc[:, 1]]] = True
    kill = np.zeros_like(graph.skel)
    for b in graph.branches:
        if b.is_cycle:
            continue
        head, tail = tuple(b.path[0]), tuple(b.path[-1])
        if not has_junction[labels[head]]:
            continue
        dh, dt = graph.degree[head], graph.degree[tail]
        if dh >= 3 and dt >= 3:
            continue
        if dh >= 3:  # keep the junction pixel, drop the rest
            drop = b.path[1:]
        elif dt >= 3:
            drop = b.path[:-1]
        else:
            drop = b.path  # endpoint-to-endpoint chain inside a junction-bearing component
        kill[drop[:, 0], drop[:, 1]] = True
    return kill


def prune_skeleton(graph: SkeletonGraph, min_path_px: float = 100.0) -> SkeletonGraph:
    """Drop short components, then terminal branches, then re-filter.

    Terminal-branch removal runs once (non-iterated); afterwards any
    component whose remaining length fell below ``min_path_px`` is dropped
    so the minimum-length guarantee holds on the output.
    """
    labels, n = graph.components()
    lengths = graph.component_lengths()
    keep = np.zeros(n + 1, dtype=bool)
    for i in range(1, n + 1):
        keep[i] = lengths.get(i, 0.0) >= min_path_px
    skel = graph.skel & keep[labels]
    g = _build_graph(skel, graph.radius)

    skel = g.skel & ~_terminal_branch_pixels(g)
    g = _build_graph(skel, graph.radius)

    labels, n = g.components()
    lengths = g.component_lengths()
    keep = np.zeros(n + 1, dtype=bool)
    for i in range(1, n + 1):
        keep[i] = lengths.get(i, 0.0) >= min_path_px
    return _build_graph(g.skel & keep[labels], graph.radius)


def rethicken(graph: SkeletonGraph) -> BinaryMask:
    """Stamp a disk of its recorded radius around every skeleton pixel.

    Disks use the strict interior (offset norm < radius), so the result is a
    subset of the mask the radii were measured on.
    """
    out = np.zeros_like(graph.skel)
    pix = graph.pixels
    if len(pix) == 0:
        return BinaryMask(out)
    radii = graph.radius[pix[:, 0], pix[:, 1]]
    h, w = out.shape
    for r in np.unique(radii):
        rc = int(np.ceil(r))
        dy, dx = np.mgrid[-rc : rc + 1, -rc : rc + 1]
        offs = np.argwhere(dy**2 + dx**2 < r**2) - rc
        pts = pix[radii == r][:, None, :] + offs[None, :, :]
        pts = pts.reshape(-1, 2)
        ok = (pts[:, 0] >= 0) & (pts[:, 0] < h) & (pts[:, 1] >= 0) & (pts[:, 1] < w)
        out[pts[ok, 0], pts[ok, 1]] = True
    return BinaryMask(out)


def prune_targets(g: BinaryMask, min_path_px: float = 100.0) -> BinaryMask:
    """Topology-aware training target: prune the annotation's skeleton and
    re-thicken what survives.

    Short skeleton components (< ``min_path_px`` total length) are removed;
    in components with at least one junction, every branch leading to an
    endpoint is removed in a single pass. Junction-free simple curves are
    governed by the length rule only. The result never escapes the source
    annotation.
    """
    if g.is_empty:
        return BinaryMask(np.zeros_like(g.data))
    graph = skeletonize(g)
    pruned = prune_skeleton(graph, min_path_px)
    return rethicken(pruned)
