"""3D profile fitting: circles and rectangles under perspective, jointly with
the camera field of view.

Both fits alternate a damped least-squares pass over shape + FoV parameters
with a separate pass over the profile position, using finite-difference
Jacobians. The mask-alignment term is made differentiable by replacing the
inside/outside count with a signed-distance hinge; the exact outside fraction
is kept for reporting.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.optimize import least_squares

from . import morpho
from .camera import CameraModel, FOV_MAX_DEG, FOV_MIN_DEG
from .errors import DegenerateMask, NotQuadrilateral
from .geom import cross2, golden_section, pca_2d, plane_basis, unit

DEPTH_ANCHOR = 10.0          # conventional depth of the profile during fitting
RADIUS_PENALTY_ALPHA = 40.0  # weight of the keep-the-profile-large term
CIRCLE_SAMPLES = 72
RECT_EDGE_SAMPLES = 18
HINGE_WIDTH_PX = 5.0
CONVERGENCE_TOL = 1e-4
MAX_OUTER_ITERS = 20


@dataclass(frozen=True)
class Circle3D:
    center: np.ndarray   # (3,) camera space
    normal: np.ndarray   # unit (3,)
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "normal", unit(self.normal))
        if self.radius <= 0:
            raise ValueError("circle radius must be positive")

    def boundary_points(self, k=CIRCLE_SAMPLES):
        return circle_boundary_points(self.center, self.normal, self.radius, k)


@dataclass(frozen=True)
class Rect3D:
    vertices: np.ndarray  # (4,3), clockwise in the image

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.shape != (4, 3):
            raise ValueError("rectangle needs 4 3D vertices")
        object.__setattr__(self, "vertices", v)

    @property
    def center(self):
        return self.vertices.mean(axis=0)

    @property
    def normal(self):
        n = np.cross(self.vertices[2] - self.vertices[0],
                     self.vertices[3] - self.vertices[1])
        return unit(n)

    @property
    def edges(self):
        v = self.vertices
        return np.stack([v[(i + 1) % 4] - v[i] for i in range(4)])

    def side_lengths(self):
        return np.linalg.norm(self.edges, axis=1)

    def boundary_points(self, per_edge=RECT_EDGE_SAMPLES):
        v = self.vertices
        pts = []
        for i in range(4):
            t = np.arange(per_edge) / per_edge
            pts.append(v[i] + t[:, None] * (v[(i + 1) % 4] - v[i]))
        return np.concatenate(pts)


@dataclass
class FitReport:
    profile: object          # Circle3D | Rect3D
    fov_deg: float
    residual: float          # final smooth objective value
    tau: float               # exact fraction of boundary samples outside mask
    iterations: int
    converged: bool = True
    ep: float = 0.0          # smooth mask-alignment part (used by global FoV)
    history: list = field(default_factory=list)

    @property
    def kind(self):
        return "circle" if isinstance(self.profile, Circle3D) else "rect"


class MaskSdf:
    """Signed distance field of a mask with bilinear sampling.

    Points outside the image get the in-grid value plus their distance to the
    grid so the hinge keeps growing smoothly off-image.
    """

    def __init__(self, mask):
        self.mask = np.asarray(mask, dtype=bool)
        self.sdf = morpho.sdf_from_mask(self.mask)
        self.h, self.w = self.mask.shape

    def sample(self, pts_xy):
        pts = np.atleast_2d(pts_xy)
        x = pts[:, 0]
        y = pts[:, 1]
        xc = np.clip(x, 0.0, self.w - 1.0)
        yc = np.clip(y, 0.0, self.h - 1.0)
        base = map_coordinates(self.sdf, [yc, xc], order=1, mode="nearest")
        return base + np.hypot(x - xc, y - yc)

    def outside_fraction(self, pts_xy):
        pts = np.atleast_2d(pts_xy)
        xi = np.round(pts[:, 0]).astype(int)
        yi = np.round(pts[:, 1]).astype(int)
        inside_img = (xi >= 0) & (xi < self.w) & (yi >= 0) & (yi < self.h)
        ok = np.zeros(len(pts), dtype=bool)
        ok[inside_img] = self.mask[yi[inside_img], xi[inside_img]]
        return float(1.0 - ok.mean())


def circle_boundary_points(center, normal, radius, k=CIRCLE_SAMPLES):
    u, w = plane_basis(normal)
    th = 2.0 * np.pi * np.arange(k) / k
    ring = np.cos(th)[:, None] * u + np.sin(th)[:, None] * w
    return np.asarray(center) + radius * ring


def _hinge(sdf_values):
    return np.maximum(0.0, sdf_values) / (HINGE_WIDTH_PX * np.sqrt(len(sdf_values)))


def axis_alignment_angle(point, direction, n_s, cam):
    """Acute angle between a 3D direction projected to 2D and the axis start
    direction; zero when the projection degenerates."""
    v = cam.projected_direction(point, direction)
    nv = np.linalg.norm(v)
    if nv < 1e-9:
        return 0.0
    c = abs(float(np.dot(v / nv, unit(n_s))))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def _alignment_residual(point, direction, n_s, cam):
    # signed sine of the angle; squaring makes it the acute-angle penalty
    v = cam.projected_direction(point, direction)
    nv = np.linalg.norm(v)
    if nv < 1e-9:
        return 0.0
    return cross2(v / nv, unit(n_s))


# ---------------------------------------------------------------------------
# circle
# ---------------------------------------------------------------------------

def init_circle(profile_mask, cam, depth=DEPTH_ANCHOR):
    """Initial 3D circle from the mask's PCA ellipse at the anchor depth."""
    pts = profile_mask.pixels_xy()
    c2, dirs, spans = pca_2d(pts)
    minor_extent = spans[1][1] - spans[1][0]
    if minor_extent < 2.0:
        raise DegenerateMask(profile_mask.id, "minor axis under 2 px")
    end_a = c2 + spans[0][0] * dirs[0]
    end_b = c2 + spans[0][1] * dirs[0]
    v = cam.backproject(np.stack([end_a, end_b, c2]), depth)
    v1, v2, center = v[0], v[1], v[2]
    radius = float(np.linalg.norm(v2 - v1) / 2.0)

    minor_end = c2 + spans[1][1] * dirs[1]
    d = cam.ray_dirs(minor_end[None, :])[0]
    b = float(np.dot(d, center))
    disc = b * b - (float(np.dot(center, center)) - radius * radius)
    if disc < 0:
        normal = np.array([0.0, 0.0, 1.0])  # ray misses sphere: face the camera
    else:
        s = (b - np.sqrt(disc)) * d
        normal = np.cross(v2 - v1, s - v1)
        if np.linalg.norm(normal) < 1e-12:
            normal = np.array([0.0, 0.0, 1.0])
        else:
            normal = unit(normal)
    if np.dot(normal, -center) < 0:
        normal = -normal
    return Circle3D(center=center, normal=normal, radius=radius)


def _circle_residuals(center_px, n, r, fov, cam0, sdf, n_s):
    cam = cam0.with_fov(fov)
    center = cam.backproject(center_px[None, :], DEPTH_ANCHOR)[0]
    n_unit = n / max(np.linalg.norm(n), 1e-12)
    pts = circle_boundary_points(center, n_unit, abs(r))
    px = cam.project(pts)
    res = list(_hinge(sdf.sample(px)))
    r_px = abs(r) * cam.focal_px / DEPTH_ANCHOR
    res.append(np.sqrt(RADIUS_PENALTY_ALPHA / max(r_px, 1e-6)))
    res.append(_alignment_residual(center, n_unit, n_s, cam))
    res.append(float(np.dot(n, n)) - 1.0)
    return np.array(res)


def _circle_position_residuals(center_px, n, r, fov, cam0, sdf):
    cam = cam0.with_fov(fov)
    center = cam.backproject(center_px[None, :], DEPTH_ANCHOR)[0]
    n_unit = n / max(np.linalg.norm(n), 1e-12)
    pts = circle_boundary_points(center, n_unit, abs(r))
    return _hinge(sdf.sample(cam.project(pts)))


def _circle_objective(center_px, n, r, fov, cam0, sdf, n_s):
    res = _circle_residuals(center_px, n, r, fov, cam0, sdf, n_s)
    return float(np.dot(res, res))


def fit_circle(profile_mask, n_s, cam, fov_locked=False, init=None,
               max_outer=MAX_OUTER_ITERS):
    """Fit a 3D circle and FoV to a profile mask.

    Alternates (a) shape+FoV least squares at fixed position with (b) a
    position-only pass in the anchor-depth plane using the mask term alone.
    The returned normal is renormalized to exact unit length.
    """
    sdf = MaskSdf(profile_mask.bitmap)
    circle = init if init is not None else init_circle(profile_mask, cam)
    center_px = cam.project(circle.center[None, :])[0]
    n = circle.normal.copy()
    r = circle.radius
    fov = cam.fov_deg

    best = (center_px.copy(), n.copy(), r, fov)
    best_obj = _circle_objective(center_px, n, r, fov, cam, sdf, n_s)
    history = [best_obj]
    iterations = 0
    converged = False
    for _ in range(max_outer):
        iterations += 1
        # (a) normal, radius and FoV at fixed center pixel
        if fov_locked:
            x0 = np.concatenate([n, [r]])

            def fun_a(x):
                return _circle_residuals(center_px, x[:3], x[3], fov,
                                         cam, sdf, n_s)
        else:
            x0 = np.concatenate([n, [r, fov]])

            def fun_a(x):
                return _circle_residuals(center_px, x[:3], x[3], x[4],
                                         cam, sdf, n_s)
        sol = least_squares(fun_a, x0, method="lm", diff_step=1e-6, max_nfev=200)
        n = sol.x[:3]
        r = abs(sol.x[3])
        if not fov_locked:
            fov = float(np.clip(sol.x[4], FOV_MIN_DEG, FOV_MAX_DEG))

        # (b) position in the anchor-depth plane, mask term only
        def fun_b(x):
            return _circle_position_residuals(x, n, r, fov, cam, sdf)

        sol_b = least_squares(fun_b, center_px, method="lm", diff_step=1e-6,
                              max_nfev=100)
        center_px = sol_b.x

        obj = _circle_objective(center_px, n, r, fov, cam, sdf, n_s)
        if obj < best_obj - 1e-15:
            improvement = best_obj - obj
            best = (center_px.copy(), n.copy(), r, fov)
            best_obj = obj
            history.append(best_obj)
            if improvement < CONVERGENCE_TOL:
                converged = True
                break
        else:
            # no further progress; keep the best state seen
            history.append(best_obj)
            converged = True
            break

    center_px, n, r, fov = best
    cam_fit = cam.with_fov(fov)
    center = cam_fit.backproject(center_px[None, :], DEPTH_ANCHOR)[0]
    n_unit = unit(n)
    if np.dot(n_unit, -center) < 0:
        n_unit = -n_unit
    circle = Circle3D(center=center, normal=n_unit, radius=r)
    tau = sdf.outside_fraction(cam_fit.project(circle.boundary_points()))
    hinges = _circle_position_residuals(center_px, n, r, fov, cam, sdf)
    r_px = r * cam_fit.focal_px / DEPTH_ANCHOR
    ep = float(np.dot(hinges, hinges)) + RADIUS_PENALTY_ALPHA / max(r_px, 1e-6)
    return FitReport(profile=circle, fov_deg=fov, residual=best_obj, tau=tau,
                     iterations=iterations, converged=converged, ep=ep,
                     history=history)


# ---------------------------------------------------------------------------
# rectangle
# ---------------------------------------------------------------------------

def _polygon_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _dp_keep(pts, tol):
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = pts[i], pts[j]
        ab = b - a
        nrm = np.linalg.norm(ab)
        seg = pts[i + 1:j]
        if nrm < 1e-12:
            d = np.linalg.norm(seg - a, axis=1)
        else:
            d = np.abs((seg[:, 0] - a[0]) * ab[1] - (seg[:, 1] - a[1]) * ab[0]) / nrm
        k = int(np.argmax(d))
        if d[k] > tol:
            keep[i + 1 + k] = True
            stack.append((i, i + 1 + k))
            stack.append((i + 1 + k, j))
    return keep


def _simplify_closed(contour, tol):
    """Douglas-Peucker on a closed contour, split at its two farthest points."""
    i0 = 0
    d = np.linalg.norm(contour - contour[0], axis=1)
    i1 = int(np.argmax(d))
    d2 = np.linalg.norm(contour - contour[i1], axis=1)
    i0 = int(np.argmax(d2))
    if i0 > i1:
        i0, i1 = i1, i0
    part1 = contour[i0:i1 + 1]
    part2 = np.concatenate([contour[i1:], contour[:i0 + 1]])
    k1 = _dp_keep(part1, tol)
    k2 = _dp_keep(part2, tol)
    out = np.concatenate([part1[k1][:-1], part2[k2][:-1]])
    return out


def detect_quadrilateral(profile_mask):
    """Simplify the mask outline to exactly four corners, clockwise from the
    top-left-most vertex."""
    from skimage.measure import find_contours

    if profile_mask.area < 16:
        raise NotQuadrilateral(profile_mask.id, "mask area under 16 px")
    padded = np.pad(profile_mask.bitmap.astype(float), 1)
    contours = find_contours(padded, 0.5)
    if not contours:
        raise NotQuadrilateral(profile_mask.id, "no outline found")
    contour = max(contours, key=len)
    pts = contour[:, ::-1] - 1.0  # (row, col) -> (x, y), undo padding
    if np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]

    mask_area = float(profile_mask.area)
    diag = np.hypot(*(pts.max(axis=0) - pts.min(axis=0)))
    lo, hi = 0.05, max(diag, 1.0)
    found = None
    for _ in range(60):
        mid = np.sqrt(lo * hi)
        poly = _simplify_closed(pts, mid)
        count = len(poly)
        if count == 4:
            found = poly
            break
        if count > 4:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1.0 + 1e-9:
            break
    if found is None:
        raise NotQuadrilateral(profile_mask.id, "no 4-vertex simplification")
    loss = abs(abs(_polygon_area(found)) - mask_area) / mask_area
    if loss >= 0.20:
        raise NotQuadrilateral(profile_mask.id,
                               f"area changes by {loss:.0%} when simplified")

    quad = found
    if _polygon_area(quad) < 0:  # enforce clockwise in y-down image coords
        quad = quad[::-1]
    start = int(np.lexsort((quad[:, 1], quad[:, 0] + quad[:, 1]))[0])
    return np.roll(quad, -start, axis=0)


def rectify_rectangle(vertices):
    """Snap 4 ordered 3D points to the closest exact planar rectangle.

    Uses the parallelogram decomposition of the ordered corners and the
    closed-form minimal-displacement orthogonalization of its two half-axes;
    the result is exactly planar with exactly equal opposite edges and right
    angles.
    """
    v = np.asarray(vertices, dtype=float)
    c = v.mean(axis=0)
    a0 = (-v[0] + v[1] + v[2] - v[3]) / 4.0
    b0 = (-v[0] - v[1] + v[2] + v[3]) / 4.0
    p = float(np.dot(a0, b0))
    if abs(p) < 1e-15:
        a, b = a0, b0
    else:
        aa = float(np.dot(a0, a0))
        bb = float(np.dot(b0, b0))
        disc = (aa + bb) ** 2 - 4.0 * p * p
        mu = ((aa + bb) - np.sqrt(max(disc, 0.0))) / (2.0 * p)
        a = (a0 - mu * b0) / (1.0 - mu * mu)
        b = (b0 - mu * a0) / (1.0 - mu * mu)
    return np.stack([c - a - b, c + a - b, c + a + b, c - a + b])


def _rect_vertices(ts, fov, corners_px, cam0):
    cam = cam0.with_fov(fov)
    dirs = cam.backproject(corners_px, 1.0)
    return np.abs(ts)[:, None] * dirs, cam


def _rect_residuals(ts, fov, corners_px, cam0, sdf, n_s):
    v, cam = _rect_vertices(ts, fov, corners_px, cam0)
    e = np.stack([v[(i + 1) % 4] - v[i] for i in range(4)])
    lens = np.linalg.norm(e, axis=1)
    diag = 0.5 * (np.linalg.norm(v[2] - v[0]) + np.linalg.norm(v[3] - v[1]))
    diag = max(diag, 1e-9)
    res = []
    for i in range(4):
        res.append((lens[i] - lens[(i + 2) % 4]) / diag)
    for i in range(4):
        denom = max(lens[i] * lens[(i + 1) % 4], 1e-12)
        res.append(float(np.dot(e[i], e[(i + 1) % 4])) / denom)
    for i in range(4):
        n1 = np.cross(e[i], e[(i + 1) % 4])
        n2 = np.cross(e[(i + 1) % 4], e[(i + 2) % 4])
        l1, l2 = np.linalg.norm(n1), np.linalg.norm(n2)
        shared = e[(i + 1) % 4] / max(lens[(i + 1) % 4], 1e-12)
        if l1 < 1e-12 or l2 < 1e-12:
            res.append(0.0)
        else:
            res.append(float(np.dot(np.cross(n1 / l1, n2 / l2), shared)))
    pts = []
    t = np.arange(RECT_EDGE_SAMPLES) / RECT_EDGE_SAMPLES
    for i in range(4):
        pts.append(v[i] + t[:, None] * (v[(i + 1) % 4] - v[i]))
    pts = np.concatenate(pts)
    px = cam.project(pts)
    res.extend(_hinge(sdf.sample(px)))
    corner_px = cam.project(v)
    side_px = np.mean([np.linalg.norm(corner_px[(i + 1) % 4] - corner_px[i])
                       for i in range(4)])
    res.append(np.sqrt(RADIUS_PENALTY_ALPHA / max(side_px, 1e-6)))
    nrm = np.cross(v[2] - v[0], v[3] - v[1])
    ln = np.linalg.norm(nrm)
    if ln < 1e-12:
        res.append(0.0)
    else:
        res.append(_alignment_residual(v.mean(axis=0), nrm / ln, n_s, cam))
    return np.array(res)


def _rect_objective(ts, fov, corners_px, cam0, sdf, n_s):
    r = _rect_residuals(ts, fov, corners_px, cam0, sdf, n_s)
    return float(np.dot(r, r))


def fit_rectangle(profile_mask, n_s, cam, fov_locked=False, init_ts=None,
                  max_outer=MAX_OUTER_ITERS):
    """Fit a 3D rectangle (four ray depths) and FoV to a profile mask.

    After every least-squares pass the vertices are snapped to an exact
    planar rectangle and re-projected onto their camera rays.
    """
    corners_px = detect_quadrilateral(profile_mask)
    sdf = MaskSdf(profile_mask.bitmap)
    ts = (np.full(4, DEPTH_ANCHOR) if init_ts is None
          else np.asarray(init_ts, dtype=float).copy())
    fov = cam.fov_deg

    best = (ts.copy(), fov)
    best_obj = _rect_objective(ts, fov, corners_px, cam, sdf, n_s)
    history = [best_obj]
    iterations = 0
    converged = False
    for _ in range(max_outer):
        iterations += 1
        if fov_locked:
            x0 = ts.copy()

            def fun(x):
                return _rect_residuals(x, fov, corners_px, cam, sdf, n_s)
        else:
            x0 = np.concatenate([ts, [fov]])

            def fun(x):
                return _rect_residuals(x[:4], x[4], corners_px, cam, sdf, n_s)
        sol = least_squares(fun, x0, method="lm", diff_step=1e-6, max_nfev=120)
        ts = np.abs(sol.x[:4])
        if not fov_locked:
            fov = float(np.clip(sol.x[4], FOV_MIN_DEG, FOV_MAX_DEG))

        # rectify to an exact rectangle, then back onto the rays
        v, cam_f = _rect_vertices(ts, fov, corners_px, cam)
        rect = rectify_rectangle(v)
        dirs = cam_f.backproject(corners_px, 1.0)
        ts = np.einsum("ij,ij->i", rect, dirs) / np.einsum("ij,ij->i", dirs, dirs)
        ts = np.abs(ts)

        obj = _rect_objective(ts, fov, corners_px, cam, sdf, n_s)
        if obj < best_obj - 1e-15:
            improvement = best_obj - obj
            best = (ts.copy(), fov)
            best_obj = obj
            history.append(best_obj)
            if improvement < CONVERGENCE_TOL:
                converged = True
                break
        else:
            history.append(best_obj)
            converged = True
            break

    ts, fov = best
    v, cam_fit = _rect_vertices(ts, fov, corners_px, cam)
    rect = Rect3D(vertices=rectify_rectangle(v))
    tau = MaskSdf(profile_mask.bitmap).outside_fraction(
        cam_fit.project(rect.boundary_points()))
    hinges = _hinge(sdf.sample(cam_fit.project(rect.boundary_points())))
    corner_px = cam_fit.project(rect.vertices)
    side_px = np.mean([np.linalg.norm(corner_px[(i + 1) % 4] - corner_px[i])
                       for i in range(4)])
    ep = float(np.dot(hinges, hinges)) + RADIUS_PENALTY_ALPHA / max(side_px, 1e-6)
    return FitReport(profile=rect, fov_deg=fov, residual=best_obj, tau=tau,
                     iterations=iterations, converged=converged, ep=ep,
                     history=history)


# ---------------------------------------------------------------------------
# global field of view
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileTask:
    """One profile to fit: its mask, axis start direction, and shape kind."""
    mask: object
    n_s: np.ndarray
    kind: str  # "circle" | "rect"


def fit_profile(task, cam, fov_locked=False, max_outer=MAX_OUTER_ITERS):
    if task.kind == "circle":
        return fit_circle(task.mask, task.n_s, cam, fov_locked=fov_locked,
                          max_outer=max_outer)
    return fit_rectangle(task.mask, task.n_s, cam, fov_locked=fov_locked,
                         max_outer=max_outer)


def optimize_global_fov(tasks, cam, tol_deg=0.5, search_outer=6):
    """Single FoV minimizing the summed mask-alignment energy of all profiles,
    each re-fitted at the candidate FoV. Returns (fov_deg, refitted reports).
    """
    if not tasks:
        raise ValueError("need at least one profile fit")

    cache = {}

    def objective(f):
        key = round(float(f), 6)
        if key not in cache:
            reports = [fit_profile(t, cam.with_fov(f), fov_locked=True,
                                   max_outer=search_outer) for t in tasks]
            cache[key] = (sum(rep.ep for rep in reports), reports)
        return cache[key][0]

    f_star, _ = golden_section(objective, FOV_MIN_DEG, FOV_MAX_DEG, tol_deg)
    f_star = float(f_star)
    reports = [fit_profile(t, cam.with_fov(f_star), fov_locked=True)
               for t in tasks]
    return f_star, reports
