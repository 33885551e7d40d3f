"""Trajectory axis extraction from body and profile masks.

The axis is the 1-pixel skeleton of the combined masks, pruned to a simple
path, classified as straight or curved, then either rectified to an exact
line or smoothed with a bilateral filter.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import morpho
from .geom import pca_2d, perp2d, unit

# straight/curved decision: max perpendicular deviation from the total
# least-squares line, relative to arc length
STRAIGHT_DEVIATION_FRAC = 0.025

BILATERAL_SIGMA_SPATIAL = 5.0
BILATERAL_SIGMA_RANGE = 3.0
BILATERAL_PASSES = 3

_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


class AxisKind(Enum):
    STRAIGHT = "straight"
    CURVED = "curved"


@dataclass(frozen=True)
class Skeleton:
    pixels: tuple          # ((row, col), ...) sorted
    cyclic: bool = False   # a cycle survived pruning; pixels hold its diameter

    @staticmethod
    def from_mask(mask):
        rows, cols = np.nonzero(mask)
        return Skeleton(pixels=tuple(sorted(zip(rows.tolist(), cols.tolist()))))

    def pixel_set(self):
        return set(self.pixels)

    def as_array_xy(self):
        arr = np.array(self.pixels, dtype=float)
        return arr[:, ::-1]  # (x, y)


@dataclass(frozen=True)
class TrajectoryAxis:
    points: np.ndarray     # (N,2) float (x, y), ordered from the profile end
    kind: AxisKind
    start_dir: np.ndarray  # unit 2-vector at the profile end

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if len(pts) < 2:
            raise ValueError("axis needs at least 2 points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "start_dir", unit(self.start_dir))


def thin(mask):
    """Morphological thinning of a mask to a single-width Skeleton."""
    return Skeleton.from_mask(morpho.zhang_suen_thin(mask))


def _degrees(pixset):
    deg = {}
    for p in pixset:
        deg[p] = sum((p[0] + dr, p[1] + dc) in pixset for dr, dc in _NEIGHBORS)
    return deg


def _walk_branch(start, pixset, deg):
    """Path from an endpoint to the first junction (exclusive) or endpoint."""
    path = [start]
    prev = None
    cur = start
    while True:
        nbrs = [(cur[0] + dr, cur[1] + dc) for dr, dc in _NEIGHBORS
                if (cur[0] + dr, cur[1] + dc) in pixset]
        nxt = [n for n in nbrs if n != prev]
        # avoid stepping back onto the path at tight diagonal turns
        nxt = [n for n in nxt if n not in path[-3:]]
        if not nxt:
            return path, None
        n = nxt[0]
        if deg[n] >= 3:
            return path, n
        path.append(n)
        prev, cur = cur, n
        if len(path) > len(pixset):
            return path, None


def _graph_diameter_path(pixset):
    """Longest shortest path in the skeleton graph (BFS twice)."""
    from collections import deque

    def bfs(src):
        dist = {src: 0}
        parent = {src: None}
        q = deque([src])
        far = src
        while q:
            cur = q.popleft()
            for dr, dc in _NEIGHBORS:
                n = (cur[0] + dr, cur[1] + dc)
                if n in pixset and n not in dist:
                    dist[n] = dist[cur] + 1
                    parent[n] = cur
                    q.append(n)
                    if dist[n] > dist[far]:
                        far = n
        return far, parent

    a, _ = bfs(min(pixset))
    b, parent = bfs(a)
    path = []
    cur = b
    while cur is not None:
        path.append(cur)
        cur = parent[cur]
    return path[::-1]


def prune(skel):
    """Delete shortest endpoint branches until no junction pixel remains.

    Ties are broken by the lexicographically smaller endpoint. If a cycle
    with no endpoints survives, its graph diameter is returned with the
    cyclic flag set.
    """
    pixset = skel.pixel_set()
    if not pixset:
        return skel
    while True:
        deg = _degrees(pixset)
        junctions = [p for p, d in deg.items() if d >= 3]
        endpoints = sorted(p for p, d in deg.items() if d == 1)
        if not junctions:
            if not endpoints and len(pixset) > 2:
                path = _graph_diameter_path(pixset)
                return Skeleton(pixels=tuple(sorted(path)), cyclic=True)
            return Skeleton(pixels=tuple(sorted(pixset)))
        if not endpoints:
            path = _graph_diameter_path(pixset)
            return Skeleton(pixels=tuple(sorted(path)), cyclic=True)
        branches = []
        for e in endpoints:
            path, junction = _walk_branch(e, pixset, deg)
            if junction is not None:
                branches.append((len(path), e, path))
        if not branches:
            return Skeleton(pixels=tuple(sorted(pixset)))
        branches.sort(key=lambda b: (b[0], b[1]))
        _, _, path = branches[0]
        pixset -= set(path)
        if not pixset:
            return Skeleton(pixels=tuple(sorted(path)))


def order_path(skel):
    """Ordered (x, y) points of a pruned, simple-path skeleton."""
    pixset = skel.pixel_set()
    if len(pixset) == 1:
        p = next(iter(pixset))
        return np.array([[p[1], p[0]]], dtype=float)
    deg = _degrees(pixset)
    endpoints = sorted(p for p, d in deg.items() if d == 1)
    start = endpoints[0] if endpoints else min(pixset)
    path = [start]
    prev = None
    cur = start
    visited = {start}
    while True:
        nbrs = [(cur[0] + dr, cur[1] + dc) for dr, dc in _NEIGHBORS
                if (cur[0] + dr, cur[1] + dc) in pixset]
        nxt = [n for n in nbrs if n != prev and n not in visited]
        if not nxt:
            break
        n = sorted(nxt)[0]
        path.append(n)
        visited.add(n)
        prev, cur = cur, n
    arr = np.array(path, dtype=float)
    return arr[:, ::-1]


def tls_line(points):
    """Total-least-squares line fit: (centroid, unit direction)."""
    c, dirs, _spans = pca_2d(points)
    return c, dirs[0]


def classify(axis_points, body=None, profiles=None):
    """Straight/curved decision for a polyline.

    The body and profile masks are accepted for interface compatibility with
    richer classifiers but are not used by this geometric test.
    """
    pts = np.asarray(axis_points, dtype=float)
    if len(pts) < 3:
        return AxisKind.STRAIGHT
    c, d = tls_line(pts)
    q = pts - c
    dev = np.abs(q[:, 0] * d[1] - q[:, 1] * d[0])
    arclen = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
    if arclen <= 0:
        return AxisKind.STRAIGHT
    return (AxisKind.STRAIGHT if dev.max() < STRAIGHT_DEVIATION_FRAC * arclen
            else AxisKind.CURVED)


def rectify_straight(axis_points, profile_major_dir, profile_center, body):
    """Replace a straight axis by an exact segment.

    Cylinder family: through the profile center, orthogonal (in 2D) to the
    profile's major axis. Cuboid family (or no major direction): along the
    total-least-squares fit of the input polyline. The segment is clipped to
    the projection extent of the body mask and ordered so the first point is
    the profile end.
    """
    pts = np.asarray(axis_points, dtype=float)
    anchor = np.asarray(profile_center, dtype=float)
    if body.label.family == "cylinder" and profile_major_dir is not None:
        direction = unit(perp2d(np.asarray(profile_major_dir, dtype=float)))
    else:
        _, direction = tls_line(pts)
    t = (body.pixels_xy() - anchor) @ direction
    t_lo, t_hi = float(t.min()), float(t.max())
    p0 = anchor + t_lo * direction
    p1 = anchor + t_hi * direction
    if np.linalg.norm(p0 - anchor) > np.linalg.norm(p1 - anchor):
        p0, p1 = p1, p0
    return np.array([p0, p1])


def _bilateral_pass(pts, sigma_s, sigma_r):
    n = len(pts)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    out = pts.copy()
    for i in range(1, n):  # first point stays pinned
        ds = np.abs(s - s[i])
        window = ds <= 3.0 * sigma_s
        dp = np.linalg.norm(pts[window] - pts[i], axis=1)
        w = np.exp(-(ds[window] ** 2) / (2 * sigma_s ** 2))
        w *= np.exp(-(dp ** 2) / (2 * sigma_r ** 2))
        out[i] = (w[:, None] * pts[window]).sum(axis=0) / w.sum()
    return out


def smooth_curved(axis_points, profile_center):
    """Anchor a curved axis at the profile center and bilateral-filter it.

    Displacements are clamped to 3 * sigma_range so filtering never drags a
    point far from its input position.
    """
    pts = np.asarray(axis_points, dtype=float).copy()
    center = np.asarray(profile_center, dtype=float)
    if np.linalg.norm(pts[-1] - center) < np.linalg.norm(pts[0] - center):
        pts = pts[::-1].copy()
    original = pts.copy()
    pts[0] = center
    for _ in range(BILATERAL_PASSES):
        pts = _bilateral_pass(pts, BILATERAL_SIGMA_SPATIAL, BILATERAL_SIGMA_RANGE)
    limit = 3.0 * BILATERAL_SIGMA_RANGE
    shift = pts - original
    norms = np.linalg.norm(shift, axis=1)
    too_far = norms > limit
    if too_far.any():
        pts[too_far] = original[too_far] + shift[too_far] * (limit / norms[too_far, None])
    pts[0] = center
    # drop consecutive duplicates introduced by filtering
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-9
    pts = pts[keep]
    k = min(4, len(pts) - 1)
    n_s = unit(pts[k] - pts[0])
    return TrajectoryAxis(points=pts, kind=AxisKind.CURVED, start_dir=n_s)


def extract_axis(body, attached_profiles, profile_center, profile_major_dir=None):
    """Full extraction: thin, prune, order, classify, rectify or smooth.

    Returns (TrajectoryAxis, pruned Skeleton). attached_profiles may be empty
    (handles); profile_center then anchors the start of the axis anyway.
    """
    union = body.bitmap.copy()
    for p in attached_profiles:
        union |= p.bitmap
    skel = prune(thin(union))
    pts = order_path(skel)
    center = np.asarray(profile_center, dtype=float)
    if len(pts) < 2:
        # degenerate skeleton (blob): fall back to the mask PCA segment
        c, dirs, spans = pca_2d(body.pixels_xy())
        lo, hi = spans[0]
        pts = np.array([c + lo * dirs[0], c + hi * dirs[0]])
    kind = classify(pts, body, attached_profiles)
    if kind is AxisKind.STRAIGHT:
        seg = rectify_straight(pts, profile_major_dir, center, body)
        n_s = unit(seg[1] - seg[0])
        return TrajectoryAxis(points=seg, kind=AxisKind.STRAIGHT, start_dir=n_s), skel
    return smooth_curved(pts, center), skel
