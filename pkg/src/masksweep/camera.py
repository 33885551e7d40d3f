"""Pinhole camera with a variable vertical field of view and a fixed pose.

The camera sits at the origin looking down -Z with Y up. Image coordinates
are continuous array coordinates: x = column index, y = row index, so the
principal point is the center of the pixel grid. Visible points have z < 0;
"depth" below always means distance along -Z.
"""

from dataclasses import dataclass

import numpy as np

FOV_MIN_DEG = 20.0
FOV_MAX_DEG = 90.0

VIEW_DIR = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class CameraModel:
    fov_deg: float
    width: int
    height: int

    def __post_init__(self):
        if not (FOV_MIN_DEG <= self.fov_deg <= FOV_MAX_DEG):
            raise ValueError(f"fov {self.fov_deg} outside [{FOV_MIN_DEG}, {FOV_MAX_DEG}]")
        if self.width < 2 or self.height < 2:
            raise ValueError("image must be at least 2x2")

    @property
    def focal_px(self):
        return (self.height / 2.0) / np.tan(np.radians(self.fov_deg) / 2.0)

    @property
    def cx(self):
        return (self.width - 1) / 2.0

    @property
    def cy(self):
        return (self.height - 1) / 2.0

    def with_fov(self, fov_deg):
        return CameraModel(float(np.clip(fov_deg, FOV_MIN_DEG, FOV_MAX_DEG)),
                           self.width, self.height)

    def project(self, points):
        """Camera-space points (N,3) with z<0 to pixel coordinates (N,2)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        z = p[:, 2]
        inv = -1.0 / z
        f = self.focal_px
        out = np.empty((len(p), 2))
        out[:, 0] = self.cx + f * p[:, 0] * inv
        out[:, 1] = self.cy - f * p[:, 1] * inv
        return out

    def backproject(self, pixels, depth):
        """Pixel coordinates (N,2) to camera-space points at the given depth.

        depth is a scalar or (N,) array of distances along -Z.
        """
        px = np.atleast_2d(np.asarray(pixels, dtype=float))
        d = np.broadcast_to(np.asarray(depth, dtype=float), (len(px),))
        f = self.focal_px
        out = np.empty((len(px), 3))
        out[:, 0] = (px[:, 0] - self.cx) * d / f
        out[:, 1] = -(px[:, 1] - self.cy) * d / f
        out[:, 2] = -d
        return out

    def ray_dirs(self, pixels, normalized=True):
        """Rays through pixels; rows are directions with z < 0."""
        d = self.backproject(pixels, 1.0)
        if normalized:
            d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d

    def projected_direction(self, point, direction, eps_scale=1e-3):
        """2D image direction of a 3D direction vector anchored at a point.

        Returns a non-unit 2D vector; callers normalize when needed. Near-zero
        output means the direction is aligned with the viewing ray.
        """
        p = np.asarray(point, dtype=float)
        d = np.asarray(direction, dtype=float)
        eps = eps_scale * max(1.0, abs(p[2]))
        a = self.project(p[None, :])[0]
        b = self.project((p + eps * d)[None, :])[0]
        return (b - a) / eps
