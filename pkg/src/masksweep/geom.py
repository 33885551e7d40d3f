"""Small geometric helpers shared across modules.

2D points are (x, y) in image coordinates (x = column, y = row, y grows
downward); 3D points are camera-space right-handed with the camera at the
origin looking down -Z, Y up.
"""

import numpy as np


def unit(v, eps=1e-12):
    """Normalize a vector; raises on (near-)zero input."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < eps:
        raise ValueError("cannot normalize near-zero vector")
    return v / n


def cross2(a, b):
    return a[0] * b[1] - a[1] * b[0]


def rot2d(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def perp2d(v):
    """Counter-clockwise (in y-down image coords: visually clockwise) perpendicular."""
    return np.array([-v[1], v[0]], dtype=float)


def rotation_about_axis(axis, angle):
    """Rodrigues rotation matrix about a unit axis."""
    a = unit(axis)
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = a
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) * c + s * k + (1.0 - c) * np.outer(a, a)


def rotation_between(a, b):
    """Rotation matrix taking unit vector a to unit vector b."""
    a = unit(a)
    b = unit(b)
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    if c > 1.0 - 1e-12:
        return np.eye(3)
    if c < -1.0 + 1e-12:
        # pick any axis perpendicular to a
        helper = np.array([1.0, 0.0, 0.0])
        if abs(a[0]) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        axis = unit(np.cross(a, helper))
        return rotation_about_axis(axis, np.pi)
    s = np.linalg.norm(v)
    return rotation_about_axis(v / s, np.arctan2(s, c))


def plane_basis(normal):
    """Deterministic orthonormal (u, w) spanning the plane with the given normal."""
    n = unit(normal)
    ref = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(n, ref)) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    u = unit(np.cross(n, ref))
    w = np.cross(n, u)
    return u, w


def polyline_arclength(points):
    """Cumulative arc length, shape (N,), starting at 0."""
    pts = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_polyline(points, n):
    """Resample a polyline to n points uniformly spaced in arc length."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        raise ValueError("polyline needs at least 2 points")
    s = polyline_arclength(pts)
    total = s[-1]
    if total <= 0:
        raise ValueError("polyline has zero length")
    t = np.linspace(0.0, total, n)
    out = np.empty((n, pts.shape[1]))
    for d in range(pts.shape[1]):
        out[:, d] = np.interp(t, s, pts[:, d])
    return out


def point_to_segments_distance(p, a, b):
    """Distance from point p to the closest of segments a[i]->b[i]."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom < 1e-12, 1.0, denom)
    t = np.clip(np.einsum("ij,ij->i", p[None, :] - a, ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return float(np.min(np.linalg.norm(proj - p[None, :], axis=1)))


def pca_2d(points):
    """PCA of 2D points.

    Returns (centroid, dirs, spans) where dirs rows are the major and minor
    unit directions and spans[i] = (min, max) projections onto dirs[i]
    relative to the centroid.
    """
    pts = np.asarray(points, dtype=float)
    c = pts.mean(axis=0)
    q = pts - c
    cov = q.T @ q / max(len(pts), 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    dirs = evecs[:, order].T
    # fix sign for determinism: largest-magnitude component positive
    for i in range(2):
        j = np.argmax(np.abs(dirs[i]))
        if dirs[i][j] < 0:
            dirs[i] = -dirs[i]
    spans = []
    for i in range(2):
        t = q @ dirs[i]
        spans.append((float(t.min()), float(t.max())))
    return c, dirs, spans


def golden_section(f, lo, hi, tol, max_iter=200):
    """Golden-section minimizer on [lo, hi]; returns (x*, f(x*))."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    it = 0
    while (b - a) > tol and it < max_iter:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
        it += 1
    x = x1 if f1 <= f2 else x2
    return x, min(f1, f2)


def numeric_jacobian(fun, x, step=1e-6, central=False):
    """Finite-difference Jacobian of a residual vector function.

    Forward differences with relative step by default; central differences
    when central=True (used as the cross-check in tests).
    """
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x), dtype=float)
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += h
        if central:
            xm = x.copy()
            xm[i] -= h
            jac[:, i] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * h)
        else:
            jac[:, i] = (np.asarray(fun(xp)) - f0) / h
    return jac
