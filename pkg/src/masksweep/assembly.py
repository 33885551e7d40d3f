"""Match profile masks to body masks by minimizing a pairwise labeling energy.

The unary term mixes the closest boundary distance between profile and body
with a proximity score based on how much of the profile falls inside the
body's oriented (PCA) bounding box. The binary term forbids two mutually
overlapping profiles from landing on the same body. Profile-less bodies near
an assigned body become handles; ones far from every body are orphans.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ClassMismatch, NoBodies

ENUMERATION_CAP = 10 ** 6
MAX_PROFILES_PER_BODY = 2


@dataclass(frozen=True)
class AssemblyParams:
    cost_c: float = 1000.0       # distance-cap constant C
    dist_frac: float = 0.03      # D as a fraction of image height
    alpha: float = 0.3           # unary mix
    sigma: float = 0.3           # proximity falloff
    lam: float = 1.0             # binary weight

    def __post_init__(self):
        if min(self.cost_c, self.dist_frac, self.sigma) <= 0 or self.lam < 0:
            raise ValueError("assembly parameters must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    def distance_threshold(self, image_height):
        return self.dist_frac * image_height


@dataclass(frozen=True)
class Assembly:
    pairs: tuple           # (profile_id, body_id)
    handles: tuple         # (handle_body_id, host_body_id)
    orphans: tuple         # body ids discarded downstream

    def profiles_of(self, body_id):
        return [p for p, b in self.pairs if b == body_id]

    def handles_of(self, body_id):
        return [h for h, b in self.handles if b == body_id]


def _boundary_tree(mask):
    return cKDTree(mask.boundary_xy())


def closest_mask_distance(a, b, tree_b=None):
    """Minimum pairwise pixel-center distance between two masks' boundaries."""
    tree = tree_b if tree_b is not None else _boundary_tree(b)
    d, _ = tree.query(a.boundary_xy(), k=1)
    return float(d.min())


def _contact_distance(a, b, tree_b=None):
    # adjacent pixel centers are 1 apart; treat touching or overlapping as 0
    return max(0.0, closest_mask_distance(a, b, tree_b) - 1.0)


def oriented_bbox(body):
    """PCA-oriented bounding box of a mask: (center, dirs, half_extents)."""
    pts = body.pixels_xy()
    c = pts.mean(axis=0)
    q = pts - c
    cov = q.T @ q / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    dirs = evecs[:, np.argsort(evals)[::-1]].T
    half = np.empty(2)
    center_off = np.empty(2)
    for i in range(2):
        t = q @ dirs[i]
        lo, hi = float(t.min()), float(t.max())
        half[i] = max((hi - lo) / 2.0, 0.5)  # widen degenerate extents to 1 px
        center_off[i] = (hi + lo) / 2.0
    center = c + center_off[0] * dirs[0] + center_off[1] * dirs[1]
    return center, dirs, half


def fraction_inside_obb(profile, body):
    """Fraction of profile pixels inside the body's oriented bounding box."""
    center, dirs, half = oriented_bbox(body)
    q = profile.pixels_xy() - center
    t0 = q @ dirs[0]
    t1 = q @ dirs[1]
    inside = (np.abs(t0) <= half[0] + 0.5) & (np.abs(t1) <= half[1] + 0.5)
    return float(inside.mean())


def unary_energy(profile, body, params, image_height=None, _tree=None):
    """alpha * E1 + (1 - alpha) * E2 for one candidate profile->body pair."""
    if not profile.label.is_profile or not body.label.is_body:
        raise ClassMismatch(
            f"unary_energy needs (profile, body), got "
            f"({profile.label.value}, {body.label.value})")
    if image_height is None:
        image_height = profile.bitmap.shape[0]
    d = _contact_distance(profile, body, _tree)
    if d > params.distance_threshold(image_height):
        e1 = params.cost_c
    else:
        e1 = d
    phi = fraction_inside_obb(profile, body)
    e2 = float(np.exp(-(phi ** 2) / (2.0 * params.sigma ** 2)))
    return params.alpha * e1 + (1.0 - params.alpha) * e2


def profiles_overlap(a, b):
    """True iff the two profile bitmaps share at least one pixel."""
    if not (a.label.is_profile and b.label.is_profile):
        raise ClassMismatch("profiles_overlap expects two profile masks")
    return bool(np.any(a.bitmap & b.bitmap))


def _total_energy(choice, unary, overlap, params):
    e = sum(unary[i][k] for i, k in enumerate(choice))
    for i in range(len(choice)):
        for j in range(i + 1, len(choice)):
            if overlap[i][j] and choice[i] == choice[j]:
                e += params.lam * params.cost_c
    return e


def _respects_capacity(choice):
    counts = {}
    for k in choice:
        counts[k] = counts.get(k, 0) + 1
        if counts[k] > MAX_PROFILES_PER_BODY:
            return False
    return True


def _solve_exact(candidates, unary, overlap, params):
    best = None
    best_e = np.inf
    for choice in itertools.product(*candidates):
        if not _respects_capacity(choice):
            continue
        e = _total_energy(choice, unary, overlap, params)
        if e < best_e - 1e-12:
            best_e = e
            best = choice
    return best


def _feasible_random_choice(candidates, rng):
    for _attempt in range(50):
        counts = {}
        choice = [None] * len(candidates)
        ok = True
        for i in rng.permutation(len(candidates)):
            opts = [k for k in candidates[i]
                    if counts.get(k, 0) < MAX_PROFILES_PER_BODY]
            if not opts:
                ok = False
                break
            k = opts[rng.integers(len(opts))]
            choice[i] = k
            counts[k] = counts.get(k, 0) + 1
        if ok:
            return choice
    return [cands[rng.integers(len(cands))] for cands in candidates]


def _solve_icm(candidates, unary, overlap, params, seed, restarts=16):
    rng = np.random.default_rng(seed)
    n = len(candidates)
    best = None
    best_e = np.inf
    for _ in range(restarts):
        choice = _feasible_random_choice(candidates, rng)
        for _sweep in range(100):
            changed = False
            for i in range(n):
                cur = choice[i]
                best_k, best_ke = cur, np.inf
                for k in candidates[i]:
                    choice[i] = k
                    if not _respects_capacity(choice):
                        continue
                    e = _total_energy(choice, unary, overlap, params)
                    if e < best_ke - 1e-12:
                        best_ke, best_k = e, k
                choice[i] = best_k
                if best_k != cur:
                    changed = True
            if not changed:
                break
        e = _total_energy(choice, unary, overlap, params)
        if e < best_e - 1e-12:
            best_e = e
            best = list(choice)
    return best


def solve_assignment(scene, params=None, seed=0):
    """Assign every profile to a body; collect handles and orphans.

    Exact enumeration when the search space is small, otherwise iterated
    conditional modes from 16 seeded random restarts.
    """
    params = params or AssemblyParams()
    profiles = sorted(scene.profiles(), key=lambda m: m.id)
    bodies = sorted(scene.bodies(), key=lambda m: m.id)
    if not bodies:
        raise NoBodies("scene contains no body masks")

    body_trees = {b.id: _boundary_tree(b) for b in bodies}
    candidates = []
    for p in profiles:
        cands = [b.id for b in bodies if b.label.family == p.label.family]
        if not cands:
            raise NoBodies(
                f"profile {p.id} ({p.label.family}) has no same-family body")
        candidates.append(cands)

    unary = [
        {b.id: unary_energy(p, scene.by_id(b.id), params,
                            image_height=scene.height, _tree=body_trees[b.id])
         for b in bodies if b.id in candidates[i]}
        for i, p in enumerate(profiles)
    ]
    overlap = [[i != j and profiles_overlap(profiles[i], profiles[j])
                for j in range(len(profiles))] for i in range(len(profiles))]

    if profiles:
        space = np.prod([float(len(c)) for c in candidates])
        if space <= ENUMERATION_CAP:
            choice = _solve_exact(candidates, unary, overlap, params)
        else:
            choice = _solve_icm(candidates, unary, overlap, params, seed)
        if choice is None:
            # capacity constraint infeasible; fall back to unary argmin order
            choice = [min(c, key=lambda k, i=i: unary[i][k])
                      for i, c in enumerate(candidates)]
        pairs = tuple((p.id, k) for p, k in zip(profiles, choice))
    else:
        pairs = ()

    assigned_ids = {b for _, b in pairs}
    threshold = params.distance_threshold(scene.height)
    handles, orphans = [], []
    for b in bodies:
        if b.id in assigned_ids:
            continue
        best_host, best_d = None, np.inf
        for host in bodies:
            if host.id not in assigned_ids:
                continue
            d = closest_mask_distance(b, host, body_trees[host.id])
            if d < best_d:
                best_d, best_host = d, host.id
        if best_host is not None and best_d <= threshold:
            handles.append((b.id, best_host))
        else:
            orphans.append(b.id)
    return Assembly(pairs=pairs, handles=tuple(handles), orphans=tuple(orphans))
