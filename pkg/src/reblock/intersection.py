"""Triangle-box overlap via the separating axis theorem, and the model-wide
block-surface overlap detection pass.

A triangle and an axis-aligned box are disjoint iff one of 13 candidate
axes separates them: the 3 box axes, the triangle's plane normal, and the
9 cross products of box axes with triangle edges.  Contact counts as
intersection (closed sets); a grazing triangle merely causes harmless
extra decomposition downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateTriangle
from .geometry import Aabb, Triangle
from .lattice import BlockModel, IntTriple
from .mesh import MeshIndex, TriangleMesh, query_candidates

# Cross-product axes with squared norm below this cannot separate anything
# (edge parallel to a box axis); the test for them is skipped.
AXIS_EPS_SQ = 1e-18


def sat_triangle_box(tri: Triangle | np.ndarray, box: Aabb) -> bool:
    """True iff the triangle and the closed box intersect.

    Works on translated vertices (v' = v - box center) to keep magnitudes
    small, and short-circuits on the first separating axis found.
    """
    v = np.asarray(tri, dtype=np.float64).reshape(3, 3)
    h = np.asarray(box.half, dtype=np.float64)
    vp = v - np.asarray(box.center, dtype=np.float64)

    # box face normals (the 3 coordinate axes)
    for c in range(3):
        col = vp[:, c]
        if col.min() > h[c] or col.max() < -h[c]:
            return False

    f = np.array([vp[1] - vp[0], vp[2] - vp[1], vp[0] - vp[2]])
    n = np.cross(f[0], f[1])
    if not n.any():
        raise DegenerateTriangle("triangle has zero normal")

    # 9 cross-product axes a = e_i x f_j
    for i in range(3):
        for j in range(3):
            a = np.zeros(3)
            a[(i + 1) % 3] = -f[j][(i + 2) % 3]
            a[(i + 2) % 3] = f[j][(i + 1) % 3]
            if a @ a < AXIS_EPS_SQ:
                continue
            p = vp @ a
            r = h @ np.abs(a)
            if p.min() > r or p.max() < -r:
                return False

    # triangle plane vs box
    r = h @ np.abs(n)
    s = n @ vp[0]
    return bool(-r <= s <= r)


def sat_batch(
    tri_verts: np.ndarray,
    centers: np.ndarray,
    halves: np.ndarray,
) -> np.ndarray:
    """Vectorized SAT over a (boxes x triangles) grid.

    ``tri_verts`` is (T, 3, 3); ``centers`` is (B, 3); ``halves`` is a
    shared (3,) half-extent or per-box (B, 3).  Returns a (B, T) boolean
    intersection matrix.
    """
    tv = np.asarray(tri_verts, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    halves = np.asarray(halves, dtype=np.float64)
    if halves.ndim == 1:
        h = halves[None, None, :]  # (1, 1, 3)
    else:
        h = halves[:, None, :]  # (B, 1, 3)
    # vp: (B, T, 3 verts, 3 coords)
    vp = tv[None, :, :, :] - centers[:, None, None, :]
    return _sat_core(vp, h)


def sat_pairs(
    tri_verts: np.ndarray, centers: np.ndarray, halves: np.ndarray
) -> np.ndarray:
    """Elementwise SAT: pair i = triangle i vs box i.  Returns (N,) bools."""
    tv = np.asarray(tri_verts, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    halves = np.asarray(halves, dtype=np.float64)
    vp = tv - centers[:, None, :]
    return _sat_core(vp, halves)


def _sat_core(vp: np.ndarray, h: np.ndarray) -> np.ndarray:
    """SAT over translated vertices.

    ``vp`` has shape (..., 3, 3): leading batch axes, then vertex, then
    coordinate.  ``h`` broadcasts against (..., 3).  Returns (...) bools.
    """
    separated = np.zeros(vp.shape[:-2], dtype=bool)

    lo = vp.min(axis=-2)
    hi = vp.max(axis=-2)
    separated |= ((lo > h) | (hi < -h)).any(axis=-1)

    f = np.stack(
        [
            vp[..., 1, :] - vp[..., 0, :],
            vp[..., 2, :] - vp[..., 1, :],
            vp[..., 0, :] - vp[..., 2, :],
        ],
        axis=-2,
    )  # (..., edge, 3)

    for i in range(3):
        i1 = (i + 1) % 3
        i2 = (i + 2) % 3
        for j in range(3):
            a = np.zeros(vp.shape[:-2] + (3,), dtype=np.float64)
            a[..., i1] = -f[..., j, i2]
            a[..., i2] = f[..., j, i1]
            norm_sq = a[..., i1] ** 2 + a[..., i2] ** 2
            p = np.einsum("...vc,...c->...v", vp, a)
            r = (np.abs(a) * h).sum(axis=-1)
            sep = (p.min(axis=-1) > r) | (p.max(axis=-1) < -r)
            separated |= sep & (norm_sq >= AXIS_EPS_SQ)

    n = np.cross(f[..., 0, :], f[..., 1, :])
    r = (np.abs(n) * h).sum(axis=-1)
    s = np.einsum("...c,...c->...", n, vp[..., 0, :])
    separated |= (s > r) | (s < -r)
    return ~separated


@dataclass
class OverlapMap:
    """Per-parent record of which surface triangles touch the parent's blocks.

    ``parents[p][surface_id]`` is a sorted int array of triangle indices;
    a parent is present only when at least one list is non-empty.
    """

    parents: dict[IntTriple, dict[int, np.ndarray]] = field(default_factory=dict)

    def intersecting_parents(self) -> set[IntTriple]:
        return set(self.parents)

    def surfaces_of(self, parent: IntTriple) -> dict[int, np.ndarray]:
        return self.parents.get(parent, {})

    def triangles(self, parent: IntTriple, surface_id: int) -> np.ndarray:
        return self.parents.get(parent, {}).get(surface_id, np.empty(0, dtype=np.int32))


def detect_overlaps(
    model: BlockModel,
    surfaces: Sequence[tuple[TriangleMesh, MeshIndex]],
) -> OverlapMap:
    """Exact block-surface overlap pass over the whole model.

    Every input block's AABB is run through the surface index for
    candidates, which are then SAT-filtered; per parent and per surface
    the union of intersecting triangle ids over that parent's blocks is
    recorded.
    """
    spec = model.spec
    acc: dict[IntTriple, dict[int, set[int]]] = {}
    tri_verts = [mesh.tri_vertices() for mesh, _ in surfaces]
    for block in model.blocks:
        box = block.aabb(spec)
        center = np.asarray(box.center, dtype=np.float64)[None, :]
        half = np.asarray(box.half, dtype=np.float64)
        for sid, (_, index) in enumerate(surfaces):
            cand = query_candidates(index, box)
            if len(cand) == 0:
                continue
            hits = sat_batch(tri_verts[sid][cand], center, half)[0]
            if not hits.any():
                continue
            acc.setdefault(block.parent, {}).setdefault(sid, set()).update(
                int(t) for t in cand[hits]
            )
    out = OverlapMap()
    for parent, per_surface in acc.items():
        out.parents[parent] = {
            sid: np.asarray(sorted(ids), dtype=np.int32)
            for sid, ids in sorted(per_surface.items())
        }
    return out


def write_overlap_csv(path: str | Path, overlap: OverlapMap) -> int:
    """Diagnostic dump, one row per (parent, surface, triangle)."""
    rows = 0
    with Path(path).open("w", newline="") as handle:
        handle.write("parent_px,parent_py,parent_pz,surface_id,triangle_id\n")
        for parent in sorted(overlap.parents, key=lambda p: (p[2], p[1], p[0])):
            for sid in sorted(overlap.parents[parent]):
                for tid in overlap.parents[parent][sid]:
                    handle.write(
                        f"{parent[0]},{parent[1]},{parent[2]},{sid},{int(tid)}\n"
                    )
                    rows += 1
    return rows
