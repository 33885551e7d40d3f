"""Editable model persistence, parametric edits, and OBJ export.

The editable format is versioned JSON carrying profiles, axes, frames and the
camera; import of an exported model reproduces it exactly. OBJ output has one
named group per part with deterministic ordering.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from . import mesh as meshmod
from .axis import AxisKind, TrajectoryAxis
from .camera import CameraModel
from .errors import (NonPositiveFactor, OffPlaneAxis, UnknownPart,
                     UnsupportedVersion)
from .geom import polyline_arclength, resample_polyline, rotation_about_axis, unit
from .profiles import Circle3D, Rect3D
from .sweep import SweepPlane, SweptPart

FORMAT_VERSION = 1
PLANE_TOL = 1e-6


@dataclass(frozen=True)
class EditableModel:
    parts: tuple
    camera: CameraModel
    provenance: dict

    def part(self, part_id):
        for p in self.parts:
            if p.part_id == part_id:
                return p
        raise UnknownPart(part_id)


# ---------------------------------------------------------------------------
# edits
# ---------------------------------------------------------------------------

def edit_scale_profile(model, part_id, factor):
    """Scale one part's profile (and swept geometry) by a uniform factor."""
    if not factor > 0:
        raise NonPositiveFactor(factor)
    target = model.part(part_id)
    new_parts = []
    for p in model.parts:
        if p.part_id != part_id:
            new_parts.append(p)
            continue
        if isinstance(p.profile, Circle3D):
            # frame scales are absolute radii for circle parts
            profile = Circle3D(center=p.profile.center, normal=p.profile.normal,
                               radius=p.profile.radius * factor)
            scales = p.scales * factor
        else:
            # rectangle frame scales are relative factors; grow the vertices
            c = p.profile.center
            profile = Rect3D(vertices=c + (p.profile.vertices - c) * factor)
            scales = p.scales.copy()
        new_parts.append(replace(p, profile=profile, scales=scales))
    _ = target
    return EditableModel(parts=tuple(new_parts), camera=model.camera,
                         provenance=dict(model.provenance))


def edit_replace_axis(model, part_id, new_axis_points):
    """Re-place a part's frames along a new 3D polyline on its sweep plane.

    Per-frame scales and directions are carried over by normalized arc
    length; directions are additionally rotated in-plane by the change of
    tangent at the same arc-length position.
    """
    part = model.part(part_id)
    pts = np.asarray(new_axis_points, dtype=float)
    if len(pts) < 2:
        raise OffPlaneAxis("replacement axis needs at least 2 points")
    plane = part.plane
    off = np.abs((pts - plane.origin) @ plane.normal)
    scale_ref = max(1.0, float(np.max(np.linalg.norm(pts - plane.origin, axis=1))))
    if np.max(off) > PLANE_TOL * scale_ref:
        raise OffPlaneAxis(
            f"axis leaves the sweep plane by {np.max(off):.2e}")

    t_count = len(part.centers)
    new_centers = resample_polyline(pts, t_count)

    old_s = polyline_arclength(part.centers)
    old_s /= max(old_s[-1], 1e-12)
    new_s = np.linspace(0.0, 1.0, t_count)
    scales = np.interp(new_s, old_s, part.scales)

    old_tan = _tangents(part.centers)
    new_tan = _tangents(new_centers)
    dirs = np.empty_like(part.directions)
    for i in range(t_count):
        ot = _interp_rows(old_s, old_tan, new_s[i])
        d = _interp_rows(old_s, part.directions, new_s[i])
        ang = np.arctan2(float(np.dot(np.cross(ot, new_tan[i]), plane.normal)),
                         float(np.dot(ot, new_tan[i])))
        dirs[i] = rotation_about_axis(plane.normal, ang) @ unit(d)

    new_part = replace(part, centers=new_centers, directions=dirs,
                       scales=scales)
    new_parts = tuple(new_part if p.part_id == part_id else p
                      for p in model.parts)
    return EditableModel(parts=new_parts, camera=model.camera,
                         provenance=dict(model.provenance))


def _tangents(centers):
    seg = np.diff(np.asarray(centers, dtype=float), axis=0)
    seg = seg / np.maximum(np.linalg.norm(seg, axis=1, keepdims=True), 1e-12)
    return np.concatenate([seg, seg[[-1]]])


def _interp_rows(s, rows, si):
    out = np.empty(rows.shape[1])
    for d in range(rows.shape[1]):
        out[d] = np.interp(si, s, rows[:, d])
    n = np.linalg.norm(out)
    return out / n if n > 1e-12 else out


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def _profile_to_dict(profile):
    if isinstance(profile, Circle3D):
        return {"type": "circle", "center": profile.center.tolist(),
                "normal": profile.normal.tolist(), "radius": float(profile.radius)}
    return {"type": "rect", "vertices": profile.vertices.tolist()}


def _profile_from_dict(d):
    if d["type"] == "circle":
        return Circle3D(center=np.array(d["center"]),
                        normal=np.array(d["normal"]), radius=d["radius"])
    return Rect3D(vertices=np.array(d["vertices"]))


def _part_to_dict(part):
    return {
        "id": part.part_id,
        "family": part.family,
        "is_handle": bool(part.is_handle),
        "profile": _profile_to_dict(part.profile),
        "axis": {
            "points": np.asarray(part.axis.points).tolist(),
            "kind": part.axis.kind.value,
            "start_dir": np.asarray(part.axis.start_dir).tolist(),
        },
        "plane": {"origin": part.plane.origin.tolist(),
                  "normal": part.plane.normal.tolist()},
        "centers": part.centers.tolist(),
        "directions": part.directions.tolist(),
        "scales": part.scales.tolist(),
    }


def _part_from_dict(d):
    axis = TrajectoryAxis(points=np.array(d["axis"]["points"]),
                          kind=AxisKind(d["axis"]["kind"]),
                          start_dir=np.array(d["axis"]["start_dir"]))
    return SweptPart(
        part_id=int(d["id"]), family=d["family"],
        profile=_profile_from_dict(d["profile"]), axis=axis,
        plane=SweepPlane(origin=np.array(d["plane"]["origin"]),
                         normal=np.array(d["plane"]["normal"])),
        centers=np.array(d["centers"]), directions=np.array(d["directions"]),
        scales=np.array(d["scales"]), is_handle=bool(d["is_handle"]))


def model_to_dict(model):
    return {
        "version": FORMAT_VERSION,
        "camera": {"fov_deg": float(model.camera.fov_deg),
                   "width": model.camera.width, "height": model.camera.height},
        "provenance": model.provenance,
        "parts": [_part_to_dict(p) for p in
                  sorted(model.parts, key=lambda p: p.part_id)],
    }


def model_from_dict(d):
    if d.get("version") != FORMAT_VERSION:
        raise UnsupportedVersion(d.get("version"))
    cam = CameraModel(fov_deg=d["camera"]["fov_deg"],
                      width=d["camera"]["width"], height=d["camera"]["height"])
    parts = tuple(_part_from_dict(pd) for pd in d["parts"])
    return EditableModel(parts=parts, camera=cam,
                         provenance=dict(d.get("provenance", {})))


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1, sort_keys=True)
        fh.write("\n")


def import_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# OBJ export
# ---------------------------------------------------------------------------

def export_obj(model, path, segments=48):
    """Write all parts as OBJ groups with positions, UVs, and triangles.

    Winding is counterclockwise seen from outside. Ordering is bit-stable:
    parts by id, frames in order, ring vertices by parameter.
    """
    lines = ["# swept-part reconstruction"]
    offset = 1
    for part in sorted(model.parts, key=lambda p: p.part_id):
        m = meshmod.loft(part, segments=segments)
        lines.append(f"g part_{part.part_id}")
        for v in m.vertices:
            lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
        for uv in m.uvs:
            lines.append(f"vt {uv[0]:.9g} {uv[1]:.9g}")
        for t in m.triangles:
            a, b, c = (int(t[0]) + offset, int(t[1]) + offset,
                       int(t[2]) + offset)
            lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
        offset += len(m.vertices)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
