"""Sweep the fitted 3D profile along the lifted trajectory axis.

Per frame, a one-dimensional scale search aligns the projected profile with
the part's masks and edge map; a global pass then smooths frame centers and
orientations with a Laplacian-plus-data least squares. Handle parts (bodies
with no visible profile) are seeded from their contact region with the host.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import mesh as meshmod
from .axis import AxisKind, TrajectoryAxis, extract_axis
from .camera import VIEW_DIR
from .errors import EdgeOnPlane, NoContact
from .geom import (golden_section, perp2d, point_to_segments_distance,
                   resample_polyline, rotation_about_axis, unit)
from .profiles import Circle3D, Rect3D

FRAME_SAMPLES = 36           # projected profile samples per frame
FRAME_RADIUS_ALPHA = 0.025   # keep-the-radius-positive term
CONVERGENCE_FRAC = 1e-3      # of the part bbox diagonal
MAX_SWEEP_ITERS = 5
DEFAULT_FRAME_TARGET = 100
CONTACT_DILATE_PX = 2


@dataclass(frozen=True)
class SweepPlane:
    origin: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "normal", unit(self.normal))

    def project_points(self, pts):
        pts = np.atleast_2d(pts)
        d = (pts - self.origin) @ self.normal
        return pts - d[:, None] * self.normal


@dataclass(frozen=True)
class SweepFrame:
    center: np.ndarray
    direction: np.ndarray
    scale: float


@dataclass
class SweptPart:
    part_id: int
    family: str                  # "cylinder" | "cuboid"
    profile: object              # Circle3D | Rect3D
    axis: TrajectoryAxis
    plane: SweepPlane
    centers: np.ndarray          # (T,3)
    directions: np.ndarray       # (T,3)
    scales: np.ndarray           # (T,)
    is_handle: bool = False
    iterations: int = 0
    converged: bool = True
    objective_history: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def frames(self):
        return [SweepFrame(c, d, float(s))
                for c, d, s in zip(self.centers, self.directions, self.scales)]

    def bbox_diagonal(self):
        lo = self.centers.min(axis=0) - self.scales.max()
        hi = self.centers.max(axis=0) + self.scales.max()
        return float(np.linalg.norm(hi - lo))


def build_sweep_plane(profile, family, cam, fallback_dir3d=None):
    """Plane hosting the 3D axis: through the profile center, orthogonal to
    the profile plane, facing the camera as much as possible.

    Cylinders: normal is the camera direction minus its component along the
    profile normal. Cuboids: the plane contains the rectangle diagonal whose
    projection best aligns with the axis start direction (the caller passes
    that diagonal via fallback_dir3d when it has one; otherwise diagonal 1-3).
    """
    if family == "cylinder" or isinstance(profile, Circle3D):
        n = profile.normal
        v = VIEW_DIR - np.dot(VIEW_DIR, n) * n
        if np.linalg.norm(v) < 1e-6:
            if fallback_dir3d is None:
                raise EdgeOnPlane("profile faces the camera exactly and no "
                                  "fallback direction was provided")
            v = fallback_dir3d - np.dot(fallback_dir3d, n) * n
        return SweepPlane(origin=profile.center, normal=unit(v))
    # cuboid: plane through the chosen diagonal, orthogonal to the rectangle
    diag = profile.vertices[2] - profile.vertices[0]
    if fallback_dir3d is not None:
        diag = fallback_dir3d
    normal = np.cross(unit(diag), profile.normal)
    return SweepPlane(origin=profile.center, normal=unit(normal))


def choose_cuboid_diagonal(rect, n_s, cam):
    """The rectangle diagonal whose 2D projection aligns best with n_s."""
    best = None
    best_dot = -1.0
    for a, b in ((0, 2), (1, 3)):
        d3 = rect.vertices[b] - rect.vertices[a]
        v = cam.projected_direction(rect.center, unit(d3))
        nv = np.linalg.norm(v)
        if nv < 1e-12:
            continue
        score = abs(float(np.dot(v / nv, unit(n_s))))
        if score > best_dot:
            best_dot = score
            best = d3
    return best if best is not None else rect.vertices[2] - rect.vertices[0]


def lift_axis(axis_points, plane, cam, frame_target=DEFAULT_FRAME_TARGET):
    """Intersect the camera rays of 2D axis points with the sweep plane and
    resample to uniform 3D arc length."""
    pts2d = np.asarray(axis_points, dtype=float)
    dirs = cam.backproject(pts2d, 1.0)  # rays, z = -1 slice
    denom = dirs @ plane.normal
    unit_denom = denom / np.linalg.norm(dirs, axis=1)
    if np.any(np.abs(unit_denom) < 5e-3):
        raise EdgeOnPlane("axis rays graze the sweep plane")
    t = float(np.dot(plane.origin, plane.normal)) / denom
    pts3d = t[:, None] * dirs
    arc = np.linalg.norm(np.diff(pts3d, axis=0), axis=1).sum()
    if arc <= 0:
        raise EdgeOnPlane("axis lifts to a single point")
    step = arc / frame_target
    t_count = max(2, int(np.ceil(arc / step - 1e-9)))
    return resample_polyline(pts3d, t_count)


def axis_tangents(centers):
    c = np.asarray(centers, dtype=float)
    seg = np.diff(c, axis=0)
    seg = seg / np.maximum(np.linalg.norm(seg, axis=1, keepdims=True), 1e-12)
    return np.concatenate([seg, seg[[-1]]])


def initial_directions(centers, plane, d0):
    """Transport the first profile normal along the axis by the in-plane
    rotation that maps the start tangent onto each frame tangent."""
    tang = axis_tangents(centers)
    n = plane.normal
    t0 = tang[0]
    out = np.empty_like(tang)
    for i, ti in enumerate(tang):
        ang = np.arctan2(float(np.dot(np.cross(t0, ti), n)),
                         float(np.dot(t0, ti)))
        out[i] = rotation_about_axis(n, ang) @ d0
    return out


def _frame_ring_3d(center, scale, ring_ab, u, w):
    return (center[None, :]
            + scale * (ring_ab[:, [0]] * u[None, :] + ring_ab[:, [1]] * w[None, :]))


def _ring_ab_params(family, profile, n=FRAME_SAMPLES):
    if family == "cylinder":
        th = 2.0 * np.pi * np.arange(n) / n
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    from .geom import plane_basis

    u0, w0 = plane_basis(profile.normal)
    offs = profile.vertices - profile.center
    ab = np.stack([offs @ u0, offs @ w0], axis=1)
    per_edge = max(1, n // 4)
    ring = []
    for i in range(4):
        t = np.arange(per_edge) / per_edge
        ring.append(ab[i] + t[:, None] * (ab[(i + 1) % 4] - ab[i]))
    return np.concatenate(ring)


def ray_mask_half_width(center, perp3d, mask, cam, max_steps=2000):
    """March a 3D ray from the frame center both ways; mean in-mask arm length."""
    h, w = mask.shape
    depth = -center[2]
    px_per_unit = cam.focal_px / max(depth, 1e-6)
    step = 0.5 / px_per_unit
    arms = []
    for sign in (1.0, -1.0):
        s = 0.0
        last_inside = 0.0
        for k in range(1, max_steps):
            s = k * step
            p = center + sign * s * perp3d
            px = cam.project(p[None, :])[0]
            xi, yi = int(round(px[0])), int(round(px[1]))
            if xi < 0 or xi >= w or yi < 0 or yi >= h or not mask[yi, xi]:
                break
            last_inside = s
        arms.append(last_inside)
    return (arms[0] + arms[1]) / 2.0 if max(arms) > 0 else 0.0


def _march_to_edge(start_px, dir2d, edge_map, max_dist):
    h, w = edge_map.shape
    for k in range(2, int(max_dist)):
        x = start_px[0] + k * dir2d[0]
        y = start_px[1] + k * dir2d[1]
        xi, yi = int(round(x)), int(round(y))
        if xi < 0 or xi >= w or yi < 0 or yi >= h:
            return None
        if edge_map[yi, xi]:
            return np.array([x, y])
    return None


def frame_objective(scale, center, u, w, ring_ab, mask_union, edge_hits, cam,
                    image_height):
    """Frame energy: outside-sample fraction + edge-to-boundary distance
    (both sides, normalized by image height) + alpha / scale."""
    ring = _frame_ring_3d(center, scale, ring_ab, u, w)
    px = cam.project(ring)
    h, wd = mask_union.shape
    xi = np.round(px[:, 0]).astype(int)
    yi = np.round(px[:, 1]).astype(int)
    ok = (xi >= 0) & (xi < wd) & (yi >= 0) & (yi < h)
    inside = np.zeros(len(px), dtype=bool)
    inside[ok] = mask_union[yi[ok], xi[ok]]
    term1 = 1.0 - inside.mean()
    term2 = 0.0
    seg_a = px
    seg_b = np.roll(px, -1, axis=0)
    for hit in edge_hits:
        if hit is None:
            continue
        term2 += point_to_segments_distance(hit, seg_a, seg_b) / image_height
    term3 = FRAME_RADIUS_ALPHA / max(scale, 1e-9)
    return term1 + term2 + term3


def optimize_frame(frame, mask_union, edge_map, cam, u, w, ring_ab,
                   perp2d_dir, image_height):
    """Golden-section search over the frame scale in [0.25, 4] x initial."""
    center = frame.center
    r0 = max(frame.scale, 1e-9)
    center_px = cam.project(center[None, :])[0]
    max_march = 0.75 * max(edge_map.shape)
    edge_hits = [_march_to_edge(center_px, s * perp2d_dir, edge_map, max_march)
                 for s in (1.0, -1.0)]

    def f(scale):
        return frame_objective(scale, center, u, w, ring_ab, mask_union,
                               edge_hits, cam, image_height)

    lo, hi = 0.25 * r0, 4.0 * r0
    best, val = golden_section(f, lo, hi, tol=max(1e-3 * r0, 1e-6))
    if f(r0) <= val:
        best, val = r0, f(r0)
    return SweepFrame(center=center, direction=frame.direction,
                      scale=float(best)), float(val)


def _laplacian_matrix(t_count):
    rows = t_count - 2
    lap = np.zeros((rows, t_count))
    for i in range(rows):
        lap[i, i] = 1.0
        lap[i, i + 1] = -2.0
        lap[i, i + 2] = 1.0
    return lap


def refine_global(centers, directions, tangents, pin_first=True,
                  weight_override=None):
    """Laplacian smoothing of centers and directions with per-frame data
    weights from consecutive tangent agreement; the first frame stays pinned
    to the fitted profile. Returns (centers, directions, objective)."""
    t_count = len(centers)
    if t_count < 3:
        return centers.copy(), directions.copy(), 0.0
    if weight_override is not None:
        wts = np.full(t_count, float(weight_override))
    else:
        dots = np.einsum("ij,ij->i", tangents[:-1], tangents[1:])
        wts = np.empty(t_count)
        wts[:-1] = np.maximum(0.0, dots)
        wts[-1] = wts[-2]
    lap = _laplacian_matrix(t_count)
    a_full = lap.T @ lap + np.diag(wts ** 2)

    def _affine_projection(vals):
        # data weight vanished: the minimizers of ||L x||^2 are the affine
        # sequences; pick the one closest to the input (ridge limit)
        t = np.arange(len(vals), dtype=float)
        basis = np.stack([np.ones_like(t), t], axis=1)
        coef, *_ = np.linalg.lstsq(basis, vals, rcond=None)
        return basis @ coef

    def solve(values):
        if np.max(wts) <= 0.0 and not pin_first:
            return _affine_projection(values)
        out = np.empty_like(values)
        for col in range(values.shape[1]):
            b = (wts ** 2) * values[:, col]
            if pin_first:
                a = a_full[1:, 1:]
                rhs = b[1:] - a_full[1:, 0] * values[0, col]
                try:
                    x = np.linalg.solve(a, rhs)
                except np.linalg.LinAlgError:
                    x = np.linalg.lstsq(a, rhs, rcond=None)[0]
                out[0, col] = values[0, col]
                out[1:, col] = x
            else:
                try:
                    x = np.linalg.solve(a_full, b)
                except np.linalg.LinAlgError:
                    x = np.linalg.lstsq(a_full, b, rcond=None)[0]
                out[:, col] = x
        return out

    new_centers = solve(np.asarray(centers, dtype=float))
    new_dirs = solve(np.asarray(directions, dtype=float))
    norms = np.maximum(np.linalg.norm(new_dirs, axis=1, keepdims=True), 1e-12)
    new_dirs = new_dirs / norms
    obj = (np.sum((lap @ new_centers) ** 2)
           + np.sum(((new_centers - centers) * wts[:, None]) ** 2)
           + np.sum((lap @ new_dirs) ** 2)
           + np.sum(((new_dirs - directions) * wts[:, None]) ** 2))
    return new_centers, new_dirs, float(obj)


def _part_masks_union(body, profiles_masks, shape):
    union = np.zeros(shape, dtype=bool)
    union |= body.bitmap
    for m in profiles_masks:
        union |= m.bitmap
    return union


def sweep_part(part_id, fit, axis, body, profile_masks, scene, cam,
               family, fit2=None, max_iters=MAX_SWEEP_ITERS,
               frame_target=DEFAULT_FRAME_TARGET, is_handle=False,
               pin_points=None, initial_scale=None):
    """Alternate per-frame scale optimization with global refinement.

    fit2, when present, is the second profile of the same body; frame scales
    are blended so the last frame matches its fitted size. pin_points snaps
    the first/last frame centers (handles attached to a host).
    """
    profile = fit.profile
    if family == "cuboid":
        diag = choose_cuboid_diagonal(profile, axis.start_dir, cam)
        plane = build_sweep_plane(profile, family, cam, fallback_dir3d=diag)
    else:
        fb = None
        if isinstance(profile, Circle3D):
            fb = _circle_inplane_major(profile, body, cam)
        plane = build_sweep_plane(profile, family, cam, fallback_dir3d=fb)

    centers = lift_axis(axis.points, plane, cam, frame_target)
    if pin_points is not None:
        centers = _pin_axis_endpoints(centers, plane, pin_points)
    t_count = len(centers)

    d0 = profile.normal if hasattr(profile, "normal") else unit(
        centers[1] - centers[0])
    if np.dot(d0, centers[-1] - centers[0]) < 0:
        d0 = -d0
    directions = initial_directions(centers, plane, d0)

    if family == "cylinder":
        base_scale = profile.radius if isinstance(profile, Circle3D) else 1.0
    else:
        base_scale = 1.0
    if initial_scale is not None:
        base_scale = initial_scale

    mask_union = _part_masks_union(body, profile_masks,
                                   (scene.height, scene.width))
    ring_ab = _ring_ab_params(family, profile)
    u0, w0 = _sweep_basis(profile)

    # initial scales from 3D ray-mask intersections, profile scale at frame 0
    tang = axis_tangents(centers)
    scales = np.empty(t_count)
    scales[0] = base_scale
    us = meshmod.transport_frames(centers, directions, u0)
    ws = np.cross(directions, us)
    size_factor = _unit_size(family, profile)
    for t in range(1, t_count):
        perp3 = unit(np.cross(plane.normal, tang[t]))
        half = ray_mask_half_width(centers[t], perp3, mask_union, cam)
        scales[t] = half / size_factor if half > 0 else scales[t - 1]

    target_end = None
    if fit2 is not None:
        target_end = _profile_scale_like(fit2.profile, family, profile)

    axis_t = axis_tangents(centers)
    history = []
    prev_centers = centers.copy()
    prev_dirs = directions.copy()
    prev_scales = scales.copy()
    diag_len = max(np.linalg.norm(centers.max(0) - centers.min(0)), 1e-9)
    converged = False
    iterations = 0
    warnings = []
    for it in range(max_iters):
        iterations = it + 1
        us = meshmod.transport_frames(centers, directions, u0)
        ws = np.cross(directions, us)
        frame_obj_total = 0.0
        center_px_all = cam.project(centers)
        for t in range(t_count):
            if t == 0 or (pin_points is not None and t == t_count - 1):
                continue
            a = center_px_all[max(t - 1, 0)]
            b = center_px_all[min(t + 1, t_count - 1)]
            perp = perp2d(unit(b - a))
            frame = SweepFrame(centers[t], directions[t], scales[t])
            new_frame, val = optimize_frame(
                frame, mask_union, scene.edge_map, cam, us[t], ws[t], ring_ab,
                perp, scene.height)
            scales[t] = new_frame.scale
            frame_obj_total += val
        if target_end is not None:
            blend = np.linspace(0.0, 1.0, t_count)
            scales = scales + blend * (target_end - scales[-1])
        centers, directions, refine_obj = refine_global(
            centers, directions, axis_t)
        centers = plane.project_points(centers)
        centers[0] = np.asarray(plane.origin)
        if pin_points is not None:
            centers = _pin_axis_endpoints(centers, plane, pin_points)
        directions[0] = d0
        total = frame_obj_total + refine_obj
        delta = max(np.abs(centers - prev_centers).max(),
                    np.abs(scales - prev_scales).max())
        if history and total > history[-1] + 1e-12:
            # keep the monotone record; stop before accepting a worse state
            centers, directions, scales = prev_centers, prev_dirs, prev_scales
            converged = True
            break
        history.append(total)
        prev_centers = centers.copy()
        prev_dirs = directions.copy()
        prev_scales = scales.copy()
        if delta < CONVERGENCE_FRAC * diag_len:
            converged = True
            break

    scales = np.maximum(scales, 1e-6)
    return SweptPart(part_id=part_id, family=family, profile=profile,
                     axis=axis, plane=plane, centers=centers,
                     directions=directions, scales=scales,
                     is_handle=is_handle, iterations=iterations,
                     converged=converged, objective_history=history,
                     warnings=warnings)


def _sweep_basis(profile):
    from .geom import plane_basis

    return plane_basis(profile.normal)


def _unit_size(family, profile):
    if family == "cylinder" and isinstance(profile, Circle3D):
        return 1.0  # ring params are unit circle; scale is the radius
    # rectangle ring params carry absolute offsets; scale is a pure factor
    return max(np.linalg.norm(profile.vertices - profile.center, axis=1).mean(),
               1e-9)


def _profile_scale_like(profile2, family, profile1):
    if family == "cylinder" and isinstance(profile2, Circle3D):
        return profile2.radius
    s2 = np.linalg.norm(profile2.vertices - profile2.center, axis=1).mean()
    s1 = np.linalg.norm(profile1.vertices - profile1.center, axis=1).mean()
    return s2 / max(s1, 1e-12)


def _circle_inplane_major(profile, body, cam):
    """In-plane direction matching the 2D major axis of the body mask."""
    from .geom import pca_2d

    if body is None:
        return None
    _, dirs, _ = pca_2d(body.pixels_xy())
    d3 = np.array([dirs[0][0], -dirs[0][1], 0.0])
    inplane = d3 - np.dot(d3, profile.normal) * profile.normal
    n = np.linalg.norm(inplane)
    return inplane / n if n > 1e-9 else None


def _pin_axis_endpoints(centers, plane, pin_points):
    """Snap first (and optionally last) centers to pinned in-plane targets,
    distributing the correction linearly along normalized arc length."""
    centers = centers.copy()
    start = plane.project_points(np.asarray(pin_points[0], dtype=float)[None])[0]
    s = np.linspace(0.0, 1.0, len(centers))
    delta0 = start - centers[0]
    centers += (1.0 - s)[:, None] * delta0[None, :]
    if len(pin_points) > 1 and pin_points[1] is not None:
        end = plane.project_points(
            np.asarray(pin_points[1], dtype=float)[None])[0]
        delta1 = end - centers[-1]
        centers += s[:, None] * delta1[None, :]
    return centers


# ---------------------------------------------------------------------------
# handles
# ---------------------------------------------------------------------------

def find_contact_regions(handle_mask, host_silhouette):
    """Connected handle regions within CONTACT_DILATE_PX of the host."""
    dist = ndimage.distance_transform_edt(~host_silhouette)
    near = handle_mask.bitmap & (dist <= CONTACT_DILATE_PX)
    if not near.any():
        raise NoContact(handle_mask.id)
    labels, n = ndimage.label(near)
    regions = []
    for k in range(1, n + 1):
        region = labels == k
        if region.sum() >= 3:
            regions.append(region)
    if not regions:
        raise NoContact(handle_mask.id)
    regions.sort(key=lambda r: int(r.sum()), reverse=True)
    return regions[:2]


def _surface_point_at_pixel(points3d, px_points, target_px, radius=2.0):
    d = np.linalg.norm(px_points - np.asarray(target_px)[None, :], axis=1)
    near = d <= radius
    if not near.any():
        near = d <= d.min() + 0.5
    cand = points3d[near]
    return cand[np.argmax(cand[:, 2])]  # z is negative: max z = nearest


def _handle_width_px(handle_mask, axis_points):
    """Mean mask width (px) perpendicular to the handle's own axis near its
    start."""
    mask = handle_mask.bitmap
    h, w = mask.shape
    pts = axis_points[: max(3, len(axis_points) // 4)]
    tang = np.diff(axis_points, axis=0)
    widths = []
    for i, p in enumerate(pts[:-1]):
        t = tang[min(i, len(tang) - 1)]
        n = np.linalg.norm(t)
        if n < 1e-9:
            continue
        d = perp2d(t / n)
        total = 0.0
        for sign in (1.0, -1.0):
            for k in range(1, 200):
                x = p[0] + sign * k * d[0]
                y = p[1] + sign * k * d[1]
                xi, yi = int(round(x)), int(round(y))
                if xi < 0 or xi >= w or yi < 0 or yi >= h or not mask[yi, xi]:
                    total += k - 1
                    break
        widths.append(total)
    return float(np.mean(widths)) if widths else 4.0


def sweep_handle(handle_mask, host, scene, cam, host_points=None,
                 max_iters=MAX_SWEEP_ITERS, frame_target=DEFAULT_FRAME_TARGET):
    """Construct a handle part from its contact region with the host part."""
    if host_points is None:
        host_points = meshmod.part_surface_points(host, 0.6, cam)
    host_px = cam.project(host_points)
    host_sil = meshmod.splat_occupancy(host_points, cam,
                                       (scene.height, scene.width))
    regions = find_contact_regions(handle_mask, host_sil)
    centroids = []
    anchors = []
    for region in regions:
        rows, cols = np.nonzero(region)
        c2 = np.array([cols.mean(), rows.mean()])
        centroids.append(c2)
        anchors.append(_surface_point_at_pixel(host_points, host_px, c2))

    traj, _skel = extract_axis(handle_mask, [], centroids[0])
    width_px = _handle_width_px(handle_mask, traj.points)
    depth = -anchors[0][2]
    radius = max((width_px / 2.0) * depth / cam.focal_px, 1e-3)

    if len(anchors) >= 2:
        u = unit(anchors[1] - anchors[0])
        normal = VIEW_DIR - np.dot(VIEW_DIR, u) * u
        plane = SweepPlane(origin=anchors[0], normal=unit(normal))
        pins = (anchors[0], anchors[1])
    else:
        plane = SweepPlane(origin=anchors[0], normal=np.array([0.0, 0.0, 1.0]))
        pins = (anchors[0], None)

    # start tangent lifted onto the plane gives the initial profile normal
    lifted = lift_axis(traj.points, plane, cam, frame_target)
    n0 = unit(lifted[1] - lifted[0])
    circle = Circle3D(center=plane.project_points(anchors[0][None])[0],
                      normal=n0, radius=radius)

    from .profiles import FitReport

    pseudo_fit = FitReport(profile=circle, fov_deg=cam.fov_deg, residual=0.0,
                           tau=0.0, iterations=0)
    part = sweep_part(part_id=handle_mask.id, fit=pseudo_fit, axis=traj,
                      body=handle_mask, profile_masks=[], scene=scene, cam=cam,
                      family="cylinder", max_iters=max_iters,
                      frame_target=frame_target, is_handle=True,
                      pin_points=pins, initial_scale=radius)
    return part
