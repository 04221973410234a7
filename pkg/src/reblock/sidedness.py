"""Side-of-surface classification.

The workhorse is parity ray casting: count ray-surface crossings from a
query point; an even count (including zero) puts the point above/outside,
an odd count below/inside.  Rays that graze triangle edges or lie in a
triangle's plane are recast with a small deterministic tilt so the count
never depends on luck.  A legacy projection-onto-nearest-triangle-normal
method is kept for comparison; it is cheap but fails on sparse irregular
triangulations, which is exactly the failure the ray method exists to fix.

Cell pre-classification assigns every cell of a surface-crossed parent a
per-surface side (above/below) plus a separate intersect flag, and leaves
cells of un-crossed surfaces untested.
"""

from __future__ import annotations

import math
import random
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateTriangle,
    EmptySurface,
    UnresolvableRay,
    ValidationError,
)
from .geometry import Vec3, aabb_from_bounds, vec3
from .intersection import OverlapMap, sat_batch
from .lattice import IntTriple, LatticeSpec, cell_lut, parent_min_corner
from .mesh import MeshIndex, TriangleMesh, mesh_diagonal, query_candidates

SIDE_ABOVE = 1
SIDE_BELOW = -1

# 3-bit sidedness codes (bit 2 / bit 1 / bit 0 within a surface's field)
CODE_ABOVE = 4
CODE_BELOW = 2
CODE_UNTESTED = 1

# Barycentric coordinates this close to the valid-region boundary make a
# hit untrustworthy: the ray may be slipping through a shared edge.
BARY_EPS = 1e-9
# Relative tolerance deciding that a ray direction lies in a triangle's plane.
PARALLEL_EPS = 1e-12
# Retry policy for grazing rays.
MAX_RECASTS = 8
TILT_RADIANS = 1e-4


class _ParallelOnPlane:
    """Sentinel: ray lies inside the triangle's plane (not an error)."""

    __slots__ = ()

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return "ParallelOnPlane"


PARALLEL_ON_PLANE = _ParallelOnPlane()


@dataclass(frozen=True)
class Ray:
    origin: Vec3
    direction: Vec3

    def __post_init__(self) -> None:
        n = math.sqrt(
            self.direction.x ** 2 + self.direction.y ** 2 + self.direction.z ** 2
        )
        if abs(n - 1.0) > 1e-12:
            raise ValidationError("ray direction must be a unit vector")


def ray_between(p0: Vec3, p1: Vec3) -> Ray:
    d = (p1.x - p0.x, p1.y - p0.y, p1.z - p0.z)
    n = math.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
    if n == 0.0:
        raise ValidationError("ray endpoints coincide")
    return Ray(vec3(*p0), vec3(d[0] / n, d[1] / n, d[2] / n))


@dataclass(frozen=True)
class RayHit:
    ray_param: float  # distance along the (unit) ray direction
    s: float
    t: float
    point: Vec3
    triangle_id: int


def ray_triangle(
    ray: Ray, tri: np.ndarray | Sequence[Sequence[float]], triangle_id: int = -1
):
    """Ray vs triangle: a RayHit, None for a miss, or PARALLEL_ON_PLANE.

    The hit test is exact on the closed barycentric region: s >= 0,
    t >= 0, s + t <= 1 and ray parameter >= 0.  A direction lying in the
    triangle's plane returns the sentinel so callers can recast.
    """
    v = np.asarray(tri, dtype=np.float64).reshape(3, 3)
    p0 = np.asarray(ray.origin, dtype=np.float64)
    d = np.asarray(ray.direction, dtype=np.float64)
    u = v[1] - v[0]
    w_edge = v[2] - v[0]
    n = np.cross(u, w_edge)
    n_norm = float(np.linalg.norm(n))
    if n_norm == 0.0:
        raise DegenerateTriangle("triangle has zero normal")
    denom = float(n @ d)
    numer = float(n @ (v[0] - p0))
    if abs(denom) <= PARALLEL_EPS * n_norm:
        scale = max(1.0, float(np.linalg.norm(v[0] - p0)))
        if abs(numer) <= PARALLEL_EPS * n_norm * scale:
            return PARALLEL_ON_PLANE
        return None
    lam = numer / denom
    if lam < 0.0:
        return None
    p = p0 + lam * d
    w = p - v[0]
    uu = float(u @ u)
    vv = float(w_edge @ w_edge)
    uv = float(u @ w_edge)
    wu = float(w @ u)
    wv = float(w @ w_edge)
    delta = uv * uv - uu * vv
    if delta == 0.0:
        raise DegenerateTriangle("triangle edges are parallel")
    s = (uv * wv - vv * wu) / delta
    t = (uv * wu - uu * wv) / delta
    if s >= 0.0 and t >= 0.0 and s + t <= 1.0:
        return RayHit(lam, s, t, vec3(*p), triangle_id)
    return None


# ---------------------------------------------------------------------------
# parity casting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParityResult:
    count: int
    side: int  # SIDE_ABOVE (even crossings) or SIDE_BELOW (odd)
    outside_support: bool
    recasts: int


def _normalize_direction(direction: Sequence[float]) -> np.ndarray:
    d = np.asarray(direction, dtype=np.float64)
    n = float(np.linalg.norm(d))
    if n == 0.0 or not np.isfinite(n):
        raise ValidationError("cast direction must be non-zero and finite")
    return d / n


def point_seed(point: Sequence[float]) -> int:
    """Deterministic jitter seed from a point's bit pattern."""
    return zlib.crc32(np.asarray(point, dtype=np.float64).tobytes())


def _tilted(direction: np.ndarray, rng: random.Random) -> np.ndarray:
    """A unit vector at most TILT_RADIANS away from ``direction``."""
    k = int(np.argmin(np.abs(direction)))
    e = np.zeros(3)
    e[k] = 1.0
    a = np.cross(direction, e)
    a /= np.linalg.norm(a)
    b = np.cross(direction, a)
    theta = rng.uniform(0.25, 1.0) * TILT_RADIANS
    phi = rng.uniform(0.0, 2.0 * math.pi)
    out = (
        direction * math.cos(theta)
        + (a * math.cos(phi) + b * math.sin(phi)) * math.sin(theta)
    )
    return out / np.linalg.norm(out)


def _column_candidates(
    point: np.ndarray,
    direction: np.ndarray,
    index: MeshIndex,
    dedup_tol: float,
) -> np.ndarray:
    """Triangles whose boxes the ray's line may cross inside the mesh bounds.

    The query box covers the full line (both directions), so an empty
    result means the point is outside the surface's support as seen along
    the cast direction.  The box is inflated enough to stay valid for
    every tilted recast direction.
    """
    lo = np.asarray(index.bounds.lo, dtype=np.float64)
    hi = np.asarray(index.bounds.hi, dtype=np.float64)
    t0, t1 = -np.inf, np.inf
    for c in range(3):
        if direction[c] == 0.0:
            if point[c] < lo[c] or point[c] > hi[c]:
                return np.empty(0, dtype=np.int32)
            continue
        a = (lo[c] - point[c]) / direction[c]
        b = (hi[c] - point[c]) / direction[c]
        t0 = max(t0, min(a, b))
        t1 = min(t1, max(a, b))
    if t0 > t1:
        return np.empty(0, dtype=np.int32)
    p_in = point + direction * t0
    p_out = point + direction * t1
    pad = 2.0 * TILT_RADIANS * max(abs(t0), abs(t1)) + dedup_tol
    box_lo = np.minimum(p_in, p_out) - pad
    box_hi = np.maximum(p_in, p_out) + pad
    return query_candidates(
        index, aabb_from_bounds(vec3(*box_lo), vec3(*box_hi))
    )


def _count_unique(params: list[float], tol: float) -> int:
    """Crossings after merging hits closer than ``tol`` along the ray."""
    if not params:
        return 0
    params = sorted(params)
    count = 1
    last = params[0]
    for lam in params[1:]:
        if lam - last > tol:
            count += 1
            last = lam
    return count


def cast_parity(
    point: Sequence[float],
    mesh: TriangleMesh,
    index: MeshIndex,
    direction: Sequence[float] = (0.0, 0.0, 1.0),
    seed: int | None = None,
) -> ParityResult:
    """Classify one point against a surface by crossing parity.

    Grazing geometry (a ray in a triangle's plane, or a hit within
    BARY_EPS of a triangle's edge — either side of it) triggers a recast
    with a deterministically seeded tilt of at most TILT_RADIANS, up to
    MAX_RECASTS times; persistent grazing raises UnresolvableRay.
    """
    p = np.asarray(point, dtype=np.float64)
    d = _normalize_direction(direction)
    dedup_tol = 1e-7 * max(1.0, mesh_diagonal(mesh))
    cand = _column_candidates(p, d, index, dedup_tol)
    if len(cand) == 0:
        return ParityResult(0, SIDE_ABOVE, outside_support=True, recasts=0)
    tv = mesh.tri_vertices()[cand]
    rng = random.Random(point_seed(p) if seed is None else seed)
    cast_dir = d
    for attempt in range(MAX_RECASTS + 1):
        count = _attempt_cast(p, cast_dir, tv, dedup_tol)
        if count is not None:
            side = SIDE_BELOW if count % 2 else SIDE_ABOVE
            return ParityResult(count, side, outside_support=False, recasts=attempt)
        cast_dir = _tilted(d, rng)
    raise UnresolvableRay(
        f"parity cast from {tuple(p)} still grazing after {MAX_RECASTS} recasts"
    )


def _attempt_cast(
    p: np.ndarray, d: np.ndarray, tv: np.ndarray, dedup_tol: float
) -> int | None:
    """One vectorized pass over candidate triangles; None means recast."""
    lam, s, t, on_plane = _mt_batch(p[None, :], d, tv, np.zeros(len(tv), dtype=np.int64))
    if on_plane.any():
        return None
    lam_tol = BARY_EPS * max(1.0, float(np.abs(lam[np.isfinite(lam)]).max(initial=1.0)))
    near = (
        (lam >= -lam_tol)
        & (s >= -BARY_EPS)
        & (t >= -BARY_EPS)
        & (s + t <= 1.0 + BARY_EPS)
        & (
            (np.abs(s) <= BARY_EPS)
            | (np.abs(t) <= BARY_EPS)
            | (np.abs(s + t - 1.0) <= BARY_EPS)
            | (np.abs(lam) <= lam_tol)
        )
    )
    if near.any():
        return None
    valid = (lam >= 0.0) & (s >= 0.0) & (t >= 0.0) & (s + t <= 1.0)
    return _count_unique([float(v) for v in lam[valid]], dedup_tol)


def _mt_batch(
    origins: np.ndarray, d: np.ndarray, tv: np.ndarray, ray_of: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batched ray-triangle solve.

    ``origins`` is (R, 3); ``tv`` is (P, 3, 3) with pair i belonging to
    ray ``ray_of[i]``.  Returns per-pair (lam, s, t, on_plane); misses and
    parallel-off-plane pairs come back with lam = -inf.
    """
    o = origins[ray_of]
    v0 = tv[:, 0]
    u = tv[:, 1] - v0
    w_edge = tv[:, 2] - v0
    n = np.cross(u, w_edge)
    n_norm = np.linalg.norm(n, axis=1)
    denom = n @ d
    numer = np.einsum("ij,ij->i", n, v0 - o)
    parallel = np.abs(denom) <= PARALLEL_EPS * n_norm
    scale = np.maximum(1.0, np.linalg.norm(v0 - o, axis=1))
    on_plane = parallel & (np.abs(numer) <= PARALLEL_EPS * n_norm * scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(parallel, -np.inf, numer / np.where(denom == 0.0, 1.0, denom))
    lam_safe = np.where(np.isfinite(lam), lam, 0.0)
    w = o + lam_safe[:, None] * d - v0
    uu = np.einsum("ij,ij->i", u, u)
    vv = np.einsum("ij,ij->i", w_edge, w_edge)
    uv = np.einsum("ij,ij->i", u, w_edge)
    wu = np.einsum("ij,ij->i", w, u)
    wv = np.einsum("ij,ij->i", w, w_edge)
    delta = uv * uv - uu * vv
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (uv * wv - vv * wu) / delta
        t = (uv * wu - uu * wv) / delta
    bad = ~np.isfinite(lam)
    s = np.where(bad, -np.inf, s)
    t = np.where(bad, -np.inf, t)
    return lam, s, t, on_plane


@dataclass
class ParityBatch:
    sides: np.ndarray  # (N,) int8
    counts: np.ndarray  # (N,) int64
    outside_support: np.ndarray  # (N,) bool


def cast_parity_many(
    points: np.ndarray,
    mesh: TriangleMesh,
    index: MeshIndex,
    direction: Sequence[float] = (0.0, 0.0, 1.0),
    seeds: Sequence[int] | None = None,
) -> ParityBatch:
    """Parity-classify many points at once.

    The clean path is fully vectorized; rays flagged as grazing fall back
    to the scalar recasting routine one by one, so results are identical
    to calling :func:`cast_parity` in a loop, only faster.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    d = _normalize_direction(direction)
    n_pts = len(pts)
    dedup_tol = 1e-7 * max(1.0, mesh_diagonal(mesh))
    tv_all = mesh.tri_vertices()

    sides = np.full(n_pts, SIDE_ABOVE, dtype=np.int8)
    counts = np.zeros(n_pts, dtype=np.int64)
    outside = np.zeros(n_pts, dtype=bool)

    ray_ids: list[np.ndarray] = []
    tri_ids: list[np.ndarray] = []
    for i in range(n_pts):
        cand = _column_candidates(pts[i], d, index, dedup_tol)
        if len(cand) == 0:
            outside[i] = True
            continue
        ray_ids.append(np.full(len(cand), i, dtype=np.int64))
        tri_ids.append(cand.astype(np.int64))
    if not ray_ids:
        return ParityBatch(sides, counts, outside)
    ray_of = np.concatenate(ray_ids)
    tris = np.concatenate(tri_ids)

    lam, s, t, on_plane = _mt_batch(pts, d, tv_all[tris], ray_of)
    finite = np.isfinite(lam)
    lam_tol = BARY_EPS * max(1.0, float(np.abs(lam[finite]).max(initial=1.0)))
    near = (
        finite
        & (lam >= -lam_tol)
        & (s >= -BARY_EPS)
        & (t >= -BARY_EPS)
        & (s + t <= 1.0 + BARY_EPS)
        & (
            (np.abs(s) <= BARY_EPS)
            | (np.abs(t) <= BARY_EPS)
            | (np.abs(s + t - 1.0) <= BARY_EPS)
            | (np.abs(lam) <= lam_tol)
        )
    )
    dirty = np.zeros(n_pts, dtype=bool)
    np.logical_or.at(dirty, ray_of[near | on_plane], True)

    valid = finite & (lam >= 0.0) & (s >= 0.0) & (t >= 0.0) & (s + t <= 1.0)
    valid &= ~dirty[ray_of]
    if valid.any():
        r_v = ray_of[valid]
        l_v = lam[valid]
        order = np.lexsort((l_v, r_v))
        r_s = r_v[order]
        l_s = l_v[order]
        new_group = np.ones(len(r_s), dtype=bool)
        new_group[1:] = (r_s[1:] != r_s[:-1]) | (l_s[1:] - l_s[:-1] > dedup_tol)
        np.add.at(counts, r_s[new_group], 1)
    sides[:] = np.where(counts % 2 == 1, SIDE_BELOW, SIDE_ABOVE)

    for i in np.flatnonzero(dirty):
        seed = int(seeds[i]) if seeds is not None else None
        res = cast_parity(pts[i], mesh, index, d, seed=seed)
        sides[i] = res.side
        counts[i] = res.count
        outside[i] = res.outside_support
    return ParityBatch(sides, counts, outside)


# ---------------------------------------------------------------------------
# legacy projection method
# ---------------------------------------------------------------------------

def mean_orientation(mesh: TriangleMesh) -> Vec3:
    """Area-weighted mean surface normal (unit length)."""
    tv = mesh.tri_vertices()
    n = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0]).sum(axis=0)
    norm = float(np.linalg.norm(n))
    if norm == 0.0:
        raise EmptySurface("mesh has no net orientation")
    return vec3(*(n / norm))


def projection_sign(
    block_centroid: Sequence[float], mesh: TriangleMesh, polarity: int = 1
) -> int:
    """Legacy sidedness: sign of projection onto the nearest triangle's normal.

    Nearest is by centroid-to-centroid distance (ties: lowest triangle
    index).  Kept for comparison with parity casting; on sparse, skewed
    triangulations the nearest triangle's plane can face the wrong way and
    this method then disagrees with the ray-cast classification.
    """
    if len(mesh) == 0:
        raise EmptySurface("cannot project against an empty surface")
    c_b = np.asarray(block_centroid, dtype=np.float64)
    tv = mesh.tri_vertices()
    centroids = tv.mean(axis=1)
    nearest = int(np.argmin(((centroids - c_b) ** 2).sum(axis=1)))
    n = np.cross(tv[nearest, 1] - tv[nearest, 0], tv[nearest, 2] - tv[nearest, 0])
    dot = float((centroids[nearest] - c_b) @ n)
    return int(-np.sign(dot)) * int(polarity)


# ---------------------------------------------------------------------------
# cell pre-classification
# ---------------------------------------------------------------------------

@dataclass
class CellClassification:
    """Per-surface cell states for one parent, raster-ordered.

    ``sides`` carries a definite above/below for every cell (intersected
    cells included — their centroid parity is what class-based merging
    and forced tagging consume).  ``intersects`` is the separate overlap
    flag.  Surfaces absent from ``surface_ids`` are untested here.
    """

    parent: IntTriple
    surface_ids: list[int]
    intersects: np.ndarray  # (S, K) bool
    sides: np.ndarray  # (S, K) int8
    outside_support: np.ndarray  # (S, K) bool

    def category_counts(self, row: int) -> tuple[int, int, int]:
        """(above, below, intersect) with intersecting cells exclusive."""
        inter = self.intersects[row]
        above = int(((self.sides[row] == SIDE_ABOVE) & ~inter).sum())
        below = int(((self.sides[row] == SIDE_BELOW) & ~inter).sum())
        return above, below, int(inter.sum())


def classify_cells(
    spec: LatticeSpec,
    parent: IntTriple,
    surfaces: Sequence[tuple[TriangleMesh, MeshIndex]],
    overlap: OverlapMap,
    directions: Sequence[Sequence[float]] | None = None,
) -> CellClassification:
    """Classify every cell of one parent against each crossing surface.

    Intersect flags come from exact SAT against the surface's triangles
    recorded for this parent; sidedness comes from parity casts at cell
    centroids (seeded by cell raster index, so recast jitter is
    reproducible run to run and thread to thread).
    """
    per_surface = overlap.surfaces_of(parent)
    surface_ids = sorted(per_surface)
    k_total = spec.cells_per_parent
    base = parent_min_corner(spec, parent)
    centers = cell_lut(spec) + np.asarray(base, dtype=np.float64)
    halves = np.asarray(spec.min_dims, dtype=np.float64) * 0.5
    seeds = np.arange(k_total, dtype=np.int64)

    intersects = np.zeros((len(surface_ids), k_total), dtype=bool)
    sides = np.zeros((len(surface_ids), k_total), dtype=np.int8)
    outside = np.zeros((len(surface_ids), k_total), dtype=bool)
    for row, sid in enumerate(surface_ids):
        mesh, index = surfaces[sid]
        tris = per_surface[sid]
        tv = mesh.tri_vertices()[tris]
        intersects[row] = sat_batch(tv, centers, halves).any(axis=1)
        direction = (0.0, 0.0, 1.0) if directions is None else directions[sid]
        batch = cast_parity_many(centers, mesh, index, direction, seeds=seeds)
        sides[row] = batch.sides
        outside[row] = batch.outside_support
    return CellClassification(
        parent=parent,
        surface_ids=surface_ids,
        intersects=intersects,
        sides=sides,
        outside_support=outside,
    )


def write_sidedness_csv(
    path: str | Path,
    spec: LatticeSpec,
    classifications: Sequence[CellClassification],
    n_surfaces: int,
) -> int:
    """Diagnostic dump: one row per (parent, cell, surface).

    ``code`` is the 3-bit sidedness state (above=4, below=2, untested=1);
    intersect flags are a separate channel (see the overlap CSV).
    """
    kx, ky, kz = spec.cell_counts
    rows = 0
    with Path(path).open("w", newline="") as handle:
        handle.write("parent,cell_ix,cell_iy,cell_iz,surface_id,code\n")
        ordered = sorted(
            classifications, key=lambda c: (c.parent[2], c.parent[1], c.parent[0])
        )
        for cls in ordered:
            p_str = f"{cls.parent[0]}:{cls.parent[1]}:{cls.parent[2]}"
            row_of = {sid: row for row, sid in enumerate(cls.surface_ids)}
            i = 0
            for nz in range(kz):
                for ny in range(ky):
                    for nx in range(kx):
                        for sid in range(n_surfaces):
                            row = row_of.get(sid)
                            if row is None:
                                code = CODE_UNTESTED
                            elif cls.sides[row, i] == SIDE_ABOVE:
                                code = CODE_ABOVE
                            else:
                                code = CODE_BELOW
                            handle.write(f"{p_str},{nx},{ny},{nz},{sid},{code}\n")
                            rows += 1
                        i += 1
    return rows
