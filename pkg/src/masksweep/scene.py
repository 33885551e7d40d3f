"""Scene ingestion: labeled instance masks, manifests, combined label images,
and the edge map reused by the sweep stage."""

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import morpho
from .errors import (DimensionMismatch, EmptyMask, MissingFile,
                     UnknownClassString, UnknownLabelValue)


class ClassLabel(Enum):
    CUBOID_PROFILE = "cuboid_profile"
    CUBOID_BODY = "cuboid_body"
    CYLINDER_PROFILE = "cylinder_profile"
    CYLINDER_BODY = "cylinder_body"

    @property
    def is_profile(self):
        return self in (ClassLabel.CUBOID_PROFILE, ClassLabel.CYLINDER_PROFILE)

    @property
    def is_body(self):
        return not self.is_profile

    @property
    def family(self):
        return "cuboid" if self.value.startswith("cuboid") else "cylinder"


# gray values used by the combined single-image label encoding
LABEL_VALUES = {
    40: ClassLabel.CUBOID_BODY,
    100: ClassLabel.CUBOID_PROFILE,
    150: ClassLabel.CYLINDER_BODY,
    200: ClassLabel.CYLINDER_PROFILE,
}
VALUE_OF_LABEL = {v: k for k, v in LABEL_VALUES.items()}


@dataclass(frozen=True)
class LabeledMask:
    id: int
    label: ClassLabel
    bitmap: np.ndarray  # 2D bool, image-sized
    bbox: tuple = field(init=False)  # (rmin, cmin, rmax, cmax) inclusive

    def __post_init__(self):
        bm = np.asarray(self.bitmap, dtype=bool)
        object.__setattr__(self, "bitmap", bm)
        if not bm.any():
            raise EmptyMask(self.id)
        object.__setattr__(self, "bbox", morpho.mask_bbox(bm))

    @property
    def area(self):
        return int(self.bitmap.sum())

    def pixels_xy(self):
        return morpho.mask_pixels_xy(self.bitmap)

    def boundary_xy(self):
        return morpho.mask_pixels_xy(morpho.boundary_ring(self.bitmap))

    def centroid_xy(self):
        return self.pixels_xy().mean(axis=0)


@dataclass(frozen=True)
class Scene:
    width: int
    height: int
    instances: tuple
    edge_map: np.ndarray
    image_present: bool
    fov_init_deg: float | None = None

    def __post_init__(self):
        ids = [m.id for m in self.instances]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate instance ids")
        for m in self.instances:
            if m.bitmap.shape != (self.height, self.width):
                raise DimensionMismatch(m.id, m.bitmap.shape[::-1],
                                        (self.width, self.height))
        if self.edge_map.shape != (self.height, self.width):
            raise ValueError("edge map dimensions do not match the scene")

    def profiles(self):
        return [m for m in self.instances if m.label.is_profile]

    def bodies(self):
        return [m for m in self.instances if m.label.is_body]

    def by_id(self, instance_id):
        for m in self.instances:
            if m.id == instance_id:
                return m
        raise KeyError(instance_id)


def _load_gray(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L"))


def load_mask_png(path):
    """8-bit grayscale PNG, nonzero = inside."""
    return _load_gray(path) > 0


def fallback_edge_map(instances, shape):
    """Union of all instance mask boundary rings (1-pixel gradient)."""
    edges = np.zeros(shape, dtype=bool)
    for m in instances:
        edges |= morpho.boundary_ring(m.bitmap)
    return edges


def compute_edge_map(image):
    """Edge map of an image: gradient magnitude over an Otsu threshold,
    thinned to roughly one-pixel width.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim == 3:
        img = img.mean(axis=2)
    if img.size == 0:
        raise ValueError("empty image")
    gx = ndimage.sobel(img, axis=1)
    gy = ndimage.sobel(img, axis=0)
    mag = np.hypot(gx, gy)
    if mag.max() <= 0:
        return np.zeros(img.shape, dtype=bool)
    from skimage.filters import threshold_otsu

    thr = threshold_otsu(mag)
    strong = mag > thr
    return morpho.zhang_suen_thin(strong)


def build_scene(instances, width, height, image=None, fov_init_deg=None):
    """Assemble a validated Scene; edge map from the image when present."""
    if image is not None:
        edges = compute_edge_map(image)
        present = True
    else:
        edges = fallback_edge_map(instances, (height, width))
        present = False
    return Scene(width=width, height=height, instances=tuple(instances),
                 edge_map=edges, image_present=present,
                 fov_init_deg=fov_init_deg)


def load_scene(manifest_path):
    """Load a scene from a JSON manifest.

    Schema: {"image"?: str, "fov_init_degrees"?: number,
             "instances": [{"id": int, "class": str, "mask": str}]}
    Paths are relative to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(manifest_path)
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    root = manifest_path.parent

    instances = []
    shape = None
    for entry in manifest.get("instances", []):
        iid = int(entry["id"])
        try:
            label = ClassLabel(entry["class"])
        except ValueError:
            raise UnknownClassString(iid, entry.get("class")) from None
        mask_path = root / entry["mask"]
        if not mask_path.is_file():
            raise MissingFile(mask_path, instance_id=iid)
        bitmap = load_mask_png(mask_path)
        if shape is None:
            shape = bitmap.shape
        elif bitmap.shape != shape:
            raise DimensionMismatch(iid, bitmap.shape[::-1], shape[::-1])
        instances.append(LabeledMask(id=iid, label=label, bitmap=bitmap))

    if shape is None:
        raise ValueError(f"{manifest_path}: manifest lists no instances")

    image = None
    if "image" in manifest and manifest["image"]:
        image_path = root / manifest["image"]
        if not image_path.is_file():
            raise MissingFile(image_path)
        with Image.open(image_path) as im:
            image = np.asarray(im.convert("RGB"))
        if image.shape[:2] != shape:
            raise DimensionMismatch("image", image.shape[1::-1], shape[::-1])

    fov = manifest.get("fov_init_degrees")
    return build_scene(instances, width=shape[1], height=shape[0],
                       image=image, fov_init_deg=fov)


def save_scene(scene, out_dir, manifest_name="manifest.json"):
    """Write a scene as mask PNGs plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for m in scene.instances:
        fname = f"mask_{m.id:03d}.png"
        Image.fromarray((m.bitmap * np.uint8(255))).save(out_dir / fname)
        entries.append({"id": m.id, "class": m.label.value, "mask": fname})
    manifest = {"instances": entries}
    if scene.fov_init_deg is not None:
        manifest["fov_init_degrees"] = scene.fov_init_deg
    path = out_dir / manifest_name
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def decode_combined_png(path):
    """Split a combined label image into per-instance masks.

    Each 4-connected component of each class value becomes one LabeledMask.
    """
    img = _load_gray(path)
    values = np.unique(img)
    for v in values:
        if v != 0 and int(v) not in LABEL_VALUES:
            raise UnknownLabelValue(v)
    masks = []
    next_id = 0
    for value in sorted(LABEL_VALUES):
        label = LABEL_VALUES[value]
        comp, n = morpho.connected_components_4(img == value)
        for k in range(1, n + 1):
            masks.append(LabeledMask(id=next_id, label=label, bitmap=comp == k))
            next_id += 1
    return masks


def encode_combined_png(masks, shape, path=None):
    """Paint masks back into a combined label image (inverse of decode)."""
    img = np.zeros(shape, dtype=np.uint8)
    for m in masks:
        img[m.bitmap] = VALUE_OF_LABEL[m.label]
    if path is not None:
        Image.fromarray(img).save(path)
    return img
