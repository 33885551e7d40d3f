"""Triangle-mesh generation for swept parts: lofted side surface, end caps,
per-vertex UVs, plus deterministic surface sampling used for silhouettes and
error metrics."""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geom import polyline_arclength, unit


@dataclass
class TriMesh:
    vertices: np.ndarray   # (V,3)
    triangles: np.ndarray  # (F,3) int
    uvs: np.ndarray        # (V,2) in [0,1]^2
    warnings: list = field(default_factory=list)

    def validate(self):
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        v = self.vertices
        t = self.triangles
        areas = 0.5 * np.linalg.norm(
            np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]), axis=1)
        if np.any(areas < 1e-14):
            raise ValueError("degenerate (zero-area) triangle")
        return True

    def triangle_areas(self):
        v, t = self.vertices, self.triangles
        return 0.5 * np.linalg.norm(
            np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]), axis=1)


def transport_frames(centers, directions, ref0):
    """Rotation-minimizing transport of a reference vector along the frames.

    Double-reflection transport keeping ref orthogonal to each direction.
    """
    centers = np.asarray(centers, dtype=float)
    dirs = np.asarray(directions, dtype=float)
    n = len(centers)
    out = np.empty((n, 3))
    r = unit(ref0 - np.dot(ref0, dirs[0]) * dirs[0])
    out[0] = r
    for i in range(n - 1):
        v1 = centers[i + 1] - centers[i]
        c1 = float(np.dot(v1, v1))
        if c1 < 1e-18:
            rl, tl = r, dirs[i]
        else:
            rl = r - (2.0 / c1) * np.dot(v1, r) * v1
            tl = dirs[i] - (2.0 / c1) * np.dot(v1, dirs[i]) * v1
        v2 = dirs[i + 1] - tl
        c2 = float(np.dot(v2, v2))
        if c2 < 1e-18:
            rn = rl
        else:
            rn = rl - (2.0 / c2) * np.dot(v2, rl) * v2
        rn = rn - np.dot(rn, dirs[i + 1]) * dirs[i + 1]
        r = unit(rn)
        out[i + 1] = r
    return out


def _ring_params(part, segments):
    """Unit-scale ring offsets (R,2) in the profile's (u,w) basis."""
    if part.family == "cylinder":
        th = 2.0 * np.pi * np.arange(segments) / segments
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    per_edge = max(1, segments // 4)
    profile = part.profile
    u0, w0 = _profile_basis(part)
    offs = profile.vertices - profile.center
    ab = np.stack([offs @ u0, offs @ w0], axis=1)
    ring = []
    for i in range(4):
        t = np.arange(per_edge) / per_edge
        ring.append(ab[i] + t[:, None] * (ab[(i + 1) % 4] - ab[i]))
    return np.concatenate(ring)


def _profile_basis(part):
    from .geom import plane_basis

    d0 = np.asarray(part.directions[0], dtype=float)
    u0, w0 = plane_basis(d0)
    return u0, w0


def frame_rings(part, segments=48):
    """Boundary rings of the profile at every frame, shape (T, R, 3)."""
    centers = np.asarray(part.centers, dtype=float)
    dirs = np.asarray(part.directions, dtype=float)
    scales = np.asarray(part.scales, dtype=float)
    u0, _ = _profile_basis(part)
    us = transport_frames(centers, dirs, u0)
    ws = np.cross(dirs, us)
    params = _ring_params(part, segments)  # (R,2)
    rings = (centers[:, None, :]
             + scales[:, None, None]
             * (params[None, :, 0, None] * us[:, None, :]
                + params[None, :, 1, None] * ws[:, None, :]))
    return rings


def loft(part, segments=48):
    """Triangle mesh of a swept part: stitched rings plus two end caps."""
    if len(part.centers) < 2:
        raise ValueError("lofting needs at least 2 frames")
    rings = frame_rings(part, segments)
    t_count, ring_n, _ = rings.shape
    warnings = []
    seg_dirs = np.diff(np.asarray(part.centers, dtype=float), axis=0)
    for t in range(t_count - 1):
        if np.dot(seg_dirs[t], part.directions[t]) <= 0:
            warnings.append(f"frame {t}: ring may self-intersect the next ring")

    verts = rings.reshape(-1, 3)
    arc = polyline_arclength(part.centers)
    u_param = arc / max(arc[-1], 1e-12)
    v_param = np.arange(ring_n) / ring_n
    uvs = np.empty((t_count * ring_n, 2))
    uvs[:, 0] = np.repeat(u_param, ring_n)
    uvs[:, 1] = np.tile(v_param, t_count)

    tris = []
    for t in range(t_count - 1):
        base = t * ring_n
        for j in range(ring_n):
            j2 = (j + 1) % ring_n
            a, b = base + j, base + j2
            c, d = base + ring_n + j2, base + ring_n + j
            tris.append((a, b, c))
            tris.append((a, c, d))

    start_center = len(verts)
    verts = np.concatenate([verts, np.asarray(part.centers)[[0]],
                            np.asarray(part.centers)[[-1]]])
    uvs = np.concatenate([uvs, [[0.0, 0.5], [1.0, 0.5]]])
    end_center = start_center + 1
    last = (t_count - 1) * ring_n
    for j in range(ring_n):
        j2 = (j + 1) % ring_n
        tris.append((start_center, j2, j))
        tris.append((end_center, last + j, last + j2))

    mesh = TriMesh(vertices=verts, triangles=np.array(tris, dtype=np.int64),
                   uvs=uvs, warnings=warnings)
    return mesh


def _triangle_lattice(n):
    """Barycentric lattice points strictly inside a triangle, deterministic."""
    pts = []
    for i in range(n):
        for j in range(n - i):
            pts.append(((i + 1.0 / 3.0) / n, (j + 1.0 / 3.0) / n))
    return np.array(pts)


def mesh_surface_points(mesh, target_count):
    """About target_count points spread area-uniformly over the mesh."""
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        return mesh.vertices.copy()
    v, t = mesh.vertices, mesh.triangles
    per_tri = areas / total * target_count
    pts = []
    for k in range(len(t)):
        n = max(1, int(np.ceil(np.sqrt(per_tri[k]))))
        bary = _triangle_lattice(n)
        a, b, c = v[t[k, 0]], v[t[k, 1]], v[t[k, 2]]
        pts.append(a + bary[:, [0]] * (b - a) + bary[:, [1]] * (c - a))
    return np.concatenate(pts)


def part_surface_points(part, px_density, cam, segments=64, caps=True):
    """Surface point sampling dense enough for px_density points per pixel.

    Density is estimated from the projected sizes of the lofted triangles.
    """
    mesh = loft(part, segments=segments)
    if not caps:
        keep = mesh.triangles.max(axis=1) < len(mesh.vertices) - 2
        mesh = TriMesh(mesh.vertices, mesh.triangles[keep],
                       mesh.uvs, mesh.warnings)
    px = cam.project(mesh.vertices)
    t = mesh.triangles
    areas_px = 0.5 * np.abs(
        (px[t[:, 1], 0] - px[t[:, 0], 0]) * (px[t[:, 2], 1] - px[t[:, 0], 1])
        - (px[t[:, 2], 0] - px[t[:, 0], 0]) * (px[t[:, 1], 1] - px[t[:, 0], 1]))
    v = mesh.vertices
    pts = [v]
    for k in range(len(t)):
        n = max(1, int(np.ceil(np.sqrt(2.0 * areas_px[k] * px_density))))
        bary = _triangle_lattice(n)
        a, b, c = v[t[k, 0]], v[t[k, 1]], v[t[k, 2]]
        pts.append(a + bary[:, [0]] * (b - a) + bary[:, [1]] * (c - a))
    return np.concatenate(pts)


def splat_occupancy(points, cam, shape, supersample=2):
    """Boolean full-resolution occupancy of projected points, hole-filled."""
    h, w = shape
    ss = supersample
    px = cam.project(points)
    xi = np.floor((px[:, 0] + 0.5) * ss).astype(int)
    yi = np.floor((px[:, 1] + 0.5) * ss).astype(int)
    ok = (xi >= 0) & (xi < w * ss) & (yi >= 0) & (yi < h * ss)
    grid = np.zeros((h * ss, w * ss), dtype=bool)
    grid[yi[ok], xi[ok]] = True
    full = grid.reshape(h, ss, w, ss).any(axis=(1, 3))
    full = ndimage.binary_closing(full, structure=np.ones((3, 3), dtype=bool))
    return ndimage.binary_fill_holes(full)


def part_silhouette(part, cam, shape, supersample=2):
    """Reprojected silhouette mask of a swept part."""
    pts = part_surface_points(part, px_density=1.2 * supersample ** 2, cam=cam)
    return splat_occupancy(pts, cam, shape, supersample)
