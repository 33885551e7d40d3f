"""Binary-mask morphology: thinning, boundaries, connected components."""

import numpy as np
from scipy import ndimage

FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def mask_bbox(mask):
    """Tight bounding box (rmin, cmin, rmax, cmax), inclusive."""
    rows = np.any(mask, axis=1)
    cols = np.any(mask, axis=0)
    rmin, rmax = np.where(rows)[0][[0, -1]]
    cmin, cmax = np.where(cols)[0][[0, -1]]
    return int(rmin), int(cmin), int(rmax), int(cmax)


def boundary_ring(mask):
    """Inner 1-pixel boundary (morphological gradient against 4-erosion)."""
    er = ndimage.binary_erosion(mask, structure=FOUR_CONN, border_value=0)
    return mask & ~er


def connected_components_4(mask):
    """4-connected components; returns (labels, count)."""
    labels, n = ndimage.label(mask, structure=FOUR_CONN)
    return labels, n


def _neighbor_stack(img):
    """The 8 neighbors P2..P9 of each interior pixel, clockwise from north."""
    return [
        img[:-2, 1:-1],   # P2 north
        img[:-2, 2:],     # P3 north-east
        img[1:-1, 2:],    # P4 east
        img[2:, 2:],      # P5 south-east
        img[2:, 1:-1],    # P6 south
        img[2:, :-2],     # P7 south-west
        img[1:-1, :-2],   # P8 west
        img[:-2, :-2],    # P9 north-west
    ]


def zhang_suen_thin(mask):
    """Two-subiteration thinning to a 1-pixel-wide, 8-connected skeleton.

    Iterates both subiterations until a fixpoint. The output is a subset of
    the input's true pixels.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    rmin, cmin, rmax, cmax = mask_bbox(mask)
    # work on a padded crop for speed; border stays false
    crop = np.zeros((rmax - rmin + 3, cmax - cmin + 3), dtype=np.uint8)
    crop[1:-1, 1:-1] = mask[rmin:rmax + 1, cmin:cmax + 1]

    while True:
        changed = False
        for phase in (0, 1):
            n = _neighbor_stack(crop)
            p = crop[1:-1, 1:-1]
            bsum = sum(x.astype(np.int8) for x in n)
            ring = np.stack(n + [n[0]], axis=0)
            trans = np.sum((ring[:-1] == 0) & (ring[1:] == 1), axis=0)
            if phase == 0:
                cond3 = (n[0] * n[2] * n[4]) == 0
                cond4 = (n[2] * n[4] * n[6]) == 0
            else:
                cond3 = (n[0] * n[2] * n[6]) == 0
                cond4 = (n[0] * n[4] * n[6]) == 0
            kill = (p == 1) & (bsum >= 2) & (bsum <= 6) & (trans == 1) & cond3 & cond4
            if kill.any():
                p[kill] = 0
                changed = True
        if not changed:
            break

    out = np.zeros_like(mask)
    out[rmin:rmax + 1, cmin:cmax + 1] = crop[1:-1, 1:-1].astype(bool)
    return out


def mask_pixels_xy(mask):
    """Foreground pixel coordinates as (N,2) float (x, y)."""
    rows, cols = np.nonzero(mask)
    return np.stack([cols, rows], axis=1).astype(float)


def sdf_from_mask(mask):
    """Signed distance field in pixels: positive outside, negative inside."""
    mask = np.asarray(mask, dtype=bool)
    outside = ndimage.distance_transform_edt(~mask)
    inside = ndimage.distance_transform_edt(mask)
    return outside - inside
