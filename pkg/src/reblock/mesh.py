"""Triangle-mesh container, file loaders, integrity checks, density
refinement, and the kD-tree accelerator used for block-vs-triangle
candidate pruning.

Meshes are treated as immutable after construction; operations that
"modify" a mesh return a new one.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyMesh, RefinementOverflow, ValidationError
from .geometry import (
    Aabb,
    Vec3,
    aabb_from_bounds,
    aabb_overlaps,
    vec3,
)

# kD-tree build policy: leaves keep at most this many triangles and the
# tree never exceeds this depth, whichever limit hits first.
INDEX_MAX_LEAF = 16
INDEX_MAX_DEPTH = 32

# Hard ceiling on triangles produced by refine_mesh (configurable per call).
DEFAULT_REFINE_CAP = 10_000_000


@dataclass
class TriangleMesh:
    """Indexed triangle soup.

    ``vertices`` is an (N, 3) float64 array, ``triangles`` an (M, 3) int32
    array of vertex indices.  ``name`` identifies the surface in reports.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    name: str = "surface"
    _tri_verts: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValidationError("vertices must be an (N, 3) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValidationError("triangles must be an (M, 3) array")
        if not np.isfinite(self.vertices).all():
            raise ValidationError(f"mesh '{self.name}' has non-finite vertices")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValidationError(f"mesh '{self.name}' has out-of-range vertex indices")

    def __len__(self) -> int:
        return len(self.triangles)

    def tri_vertices(self) -> np.ndarray:
        """(M, 3, 3) array: triangle -> vertex -> coordinate (cached)."""
        if self._tri_verts is None:
            self._tri_verts = self.vertices[self.triangles]
        return self._tri_verts


def mesh_aabb(mesh: TriangleMesh) -> Aabb:
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    eps = 1e-9 * max(1.0, extent)
    flat = (hi - lo) < eps
    lo = lo - np.where(flat, eps, 0.0)
    hi = hi + np.where(flat, eps, 0.0)
    return aabb_from_bounds(vec3(*lo), vec3(*hi))


def mesh_diagonal(mesh: TriangleMesh) -> float:
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    return float(np.linalg.norm(hi - lo))


def mean_edge_length(mesh: TriangleMesh) -> float:
    tv = mesh.tri_vertices()
    e = np.concatenate([tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 1], tv[:, 0] - tv[:, 2]])
    return float(np.linalg.norm(e, axis=1).mean())


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------

def load_mesh(path: str | Path) -> TriangleMesh:
    """Load an ``.off`` or triangulated ``.obj`` mesh by file extension."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"mesh file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".off":
        return load_off(path)
    if suffix == ".obj":
        return load_obj(path)
    raise ValidationError(f"unsupported mesh format '{suffix}' for {path}")


def _meaningful_lines(text: str) -> Iterable[tuple[int, str]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def load_off(path: str | Path) -> TriangleMesh:
    path = Path(path)
    lines = list(_meaningful_lines(path.read_text()))
    if not lines:
        raise ValidationError(f"{path}: empty OFF file")
    pos = 0
    header = lines[pos][1]
    if header.upper().startswith("OFF"):
        rest = header[3:].strip()
        pos += 1
    else:
        raise ValidationError(f"{path}:{lines[pos][0]}: missing OFF header")
    if rest:
        counts_line = rest
        counts_lineno = lines[0][0]
    else:
        if pos >= len(lines):
            raise ValidationError(f"{path}: truncated OFF file")
        counts_lineno, counts_line = lines[pos]
        pos += 1
    parts = counts_line.split()
    if len(parts) < 2:
        raise ValidationError(f"{path}:{counts_lineno}: expected 'nv nf ne' counts")
    nv, nf = int(parts[0]), int(parts[1])

    if pos + nv + nf > len(lines):
        raise ValidationError(f"{path}: fewer data lines than the header promises")
    verts = np.empty((nv, 3), dtype=np.float64)
    for i in range(nv):
        lineno, line = lines[pos + i]
        fields = line.split()
        if len(fields) < 3:
            raise ValidationError(f"{path}:{lineno}: bad vertex line")
        verts[i] = [float(fields[0]), float(fields[1]), float(fields[2])]
    pos += nv
    tris = np.empty((nf, 3), dtype=np.int32)
    for i in range(nf):
        lineno, line = lines[pos + i]
        fields = line.split()
        if not fields:
            raise ValidationError(f"{path}:{lineno}: bad face line")
        k = int(fields[0])
        if k != 3:
            raise ValidationError(
                f"{path}:{lineno}: face with {k} vertices; only triangles are supported"
            )
        if len(fields) < 4:
            raise ValidationError(f"{path}:{lineno}: truncated face line")
        tris[i] = [int(fields[1]), int(fields[2]), int(fields[3])]
    if nf == 0:
        raise EmptyMesh(f"{path}: OFF file declares no faces")
    return TriangleMesh(verts, tris, name=path.stem)


def load_obj(path: str | Path) -> TriangleMesh:
    """Minimal OBJ subset: ``v`` and ``f`` records, triangles only.

    Face vertices of the ``a/t/n`` form are accepted (texture/normal
    references are ignored); polygons with more than 3 vertices are
    rejected rather than fanned.
    """
    path = Path(path)
    verts: list[list[float]] = []
    tris: list[list[int]] = []
    for lineno, line in _meaningful_lines(path.read_text()):
        fields = line.split()
        tag = fields[0]
        if tag == "v":
            if len(fields) < 4:
                raise ValidationError(f"{path}:{lineno}: bad vertex line")
            verts.append([float(fields[1]), float(fields[2]), float(fields[3])])
        elif tag == "f":
            refs = fields[1:]
            if len(refs) != 3:
                raise ValidationError(
                    f"{path}:{lineno}: face with {len(refs)} vertices; "
                    "only triangulated OBJ files are supported"
                )
            idx = []
            for ref in refs:
                head = ref.split("/", 1)[0]
                value = int(head)
                if value < 0:
                    value = len(verts) + 1 + value
                idx.append(value - 1)
            tris.append(idx)
        # every other record type (vn, vt, usemtl, o, g, s, ...) is ignored
    if not tris:
        raise EmptyMesh(f"{path}: no faces found")
    return TriangleMesh(
        np.asarray(verts, dtype=np.float64),
        np.asarray(tris, dtype=np.int32),
        name=path.stem,
    )


# ---------------------------------------------------------------------------
# integrity
# ---------------------------------------------------------------------------

def integrity_check(mesh: TriangleMesh) -> tuple[TriangleMesh, list[int]]:
    """Drop degenerate triangles; return (clean mesh, removed indices).

    A triangle is degenerate when it repeats a vertex index or its normal
    vector is exactly zero (vertices collinear or coincident).  The vertex
    list is kept as-is, so surviving indices remain valid and orphan
    vertices are permitted.
    """
    tris = mesh.triangles
    if len(tris) == 0:
        raise EmptyMesh(f"mesh '{mesh.name}' has no triangles")
    tv = mesh.tri_vertices()
    normals = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    zero_normal = (normals == 0.0).all(axis=1)
    repeated = (
        (tris[:, 0] == tris[:, 1])
        | (tris[:, 1] == tris[:, 2])
        | (tris[:, 2] == tris[:, 0])
    )
    bad = zero_normal | repeated
    removed = np.flatnonzero(bad)
    if len(removed) == len(tris):
        raise EmptyMesh(f"mesh '{mesh.name}': all triangles degenerate")
    if len(removed) == 0:
        return mesh, []
    return (
        TriangleMesh(mesh.vertices, tris[~bad], name=mesh.name),
        [int(i) for i in removed],
    )


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RefineParams:
    """Density thresholds: split until area and every edge are below these."""

    max_triangle_area: float
    max_edge_length: float

    def __post_init__(self) -> None:
        if self.max_triangle_area <= 0 or self.max_edge_length <= 0:
            raise ValidationError("refinement thresholds must be positive")


def refine_mesh(
    mesh: TriangleMesh,
    params: RefineParams,
    cap: int = DEFAULT_REFINE_CAP,
) -> TriangleMesh:
    """Recursively bisect longest edges until every triangle satisfies
    ``params``.

    Splitting an edge also splits the neighbour sharing it (at the same
    midpoint), so the refined mesh stays conforming: no T-junctions are
    introduced and the union of triangles is geometrically unchanged.
    """
    verts: list[tuple[float, float, float]] = [tuple(v) for v in mesh.vertices]
    vert_ids: dict[tuple[float, float, float], int] = {v: i for i, v in enumerate(verts)}
    tris: list[tuple[int, int, int]] = [tuple(t) for t in mesh.triangles]
    alive: list[bool] = [True] * len(tris)

    def edge_key(a: int, b: int) -> tuple[int, int]:
        return (a, b) if a < b else (b, a)

    edge_map: dict[tuple[int, int], set[int]] = {}

    def register(tid: int) -> None:
        a, b, c = tris[tid]
        for e in (edge_key(a, b), edge_key(b, c), edge_key(c, a)):
            edge_map.setdefault(e, set()).add(tid)

    def unregister(tid: int) -> None:
        a, b, c = tris[tid]
        for e in (edge_key(a, b), edge_key(b, c), edge_key(c, a)):
            owners = edge_map.get(e)
            if owners is not None:
                owners.discard(tid)

    for tid in range(len(tris)):
        register(tid)

    max_area = params.max_triangle_area
    max_edge_sq = params.max_edge_length * params.max_edge_length

    def needs_split(tid: int) -> tuple[int, int] | None:
        """Return the longest edge (as a directed pair) if over threshold."""
        a, b, c = tris[tid]
        pa, pb, pc = verts[a], verts[b], verts[c]
        ab = _dist_sq(pa, pb)
        bc = _dist_sq(pb, pc)
        ca = _dist_sq(pc, pa)
        longest = max(ab, bc, ca)
        area = _tri_area(pa, pb, pc)
        if area <= max_area and longest <= max_edge_sq:
            return None
        if longest == ab:
            return (a, b)
        if longest == bc:
            return (b, c)
        return (c, a)

    queue: deque[int] = deque(range(len(tris)))
    while queue:
        tid = queue.popleft()
        if not alive[tid]:
            continue
        split = needs_split(tid)
        if split is None:
            continue
        ea, eb = split
        pa, pb = verts[ea], verts[eb]
        mid = ((pa[0] + pb[0]) * 0.5, (pa[1] + pb[1]) * 0.5, (pa[2] + pb[2]) * 0.5)
        m = vert_ids.get(mid)
        if m is None:
            m = len(verts)
            verts.append(mid)
            vert_ids[mid] = m
        # split every live triangle that shares the edge, so the mesh
        # stays conforming even when the edge is not the neighbour's longest
        owners = [t for t in edge_map.get(edge_key(ea, eb), ()) if alive[t]]
        for owner in owners:
            corners = tris[owner]
            alive[owner] = False
            unregister(owner)
            for i in range(3):
                p, q = corners[i], corners[(i + 1) % 3]
                if edge_key(p, q) == edge_key(ea, eb):
                    o = corners[(i + 2) % 3]
                    children = ((p, m, o), (m, q, o))
                    break
            else:  # pragma: no cover - edge map guarantees membership
                raise AssertionError("edge not found in owning triangle")
            for child in children:
                cid = len(tris)
                tris.append(child)
                alive.append(True)
                register(cid)
                queue.append(cid)
            if len(tris) > cap * 2 or sum(alive) > cap:
                raise RefinementOverflow(
                    f"refinement of '{mesh.name}' exceeded {cap} triangles"
                )

    out = [t for t, ok in zip(tris, alive) if ok]
    return TriangleMesh(
        np.asarray(verts, dtype=np.float64),
        np.asarray(out, dtype=np.int32),
        name=mesh.name,
    )


def _dist_sq(a: Sequence[float], b: Sequence[float]) -> float:
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    dz = a[2] - b[2]
    return dx * dx + dy * dy + dz * dz


def _tri_area(a: Sequence[float], b: Sequence[float], c: Sequence[float]) -> float:
    ux, uy, uz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    vx, vy, vz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    nx = uy * vz - uz * vy
    ny = uz * vx - ux * vz
    nz = ux * vy - uy * vx
    return 0.5 * math.sqrt(nx * nx + ny * ny + nz * nz)


# ---------------------------------------------------------------------------
# kD-tree index
# ---------------------------------------------------------------------------

@dataclass
class _IndexNode:
    axis: int = -1
    split: float = 0.0
    left: "_IndexNode | None" = None
    right: "_IndexNode | None" = None
    leaf: np.ndarray | None = None  # triangle ids, None for interior nodes


@dataclass
class MeshIndex:
    """Binary space partition over triangle AABBs.

    Triangles whose boxes straddle a split plane are referenced from both
    subtrees, so a query returns a conservative superset of the true
    overlap set.
    """

    root: _IndexNode
    tri_lo: np.ndarray  # (M, 3) per-triangle AABB minima
    tri_hi: np.ndarray  # (M, 3) per-triangle AABB maxima
    bounds: Aabb


def build_index(
    mesh: TriangleMesh,
    max_leaf: int = INDEX_MAX_LEAF,
    max_depth: int = INDEX_MAX_DEPTH,
) -> MeshIndex:
    if len(mesh) == 0:
        raise EmptyMesh(f"mesh '{mesh.name}' has no triangles to index")
    tv = mesh.tri_vertices()
    lo = tv.min(axis=1)
    hi = tv.max(axis=1)
    # inflate zero-thickness triangle boxes the same way geometry.triangle_aabb does
    extent = np.maximum((hi - lo).max(axis=1), 1.0)
    eps = (1e-9 * extent)[:, None]
    flat = (hi - lo) < eps
    lo = np.where(flat, lo - eps, lo)
    hi = np.where(flat, hi + eps, hi)
    centers = (lo + hi) * 0.5

    def build(ids: np.ndarray, depth: int) -> _IndexNode:
        if len(ids) <= max_leaf or depth >= max_depth:
            return _IndexNode(leaf=np.sort(ids))
        ext = hi[ids].max(axis=0) - lo[ids].min(axis=0)
        axis = int(np.argmax(ext))
        split = float(np.median(centers[ids, axis]))
        left_ids = ids[lo[ids, axis] <= split]
        right_ids = ids[hi[ids, axis] >= split]
        if len(left_ids) == len(ids) and len(right_ids) == len(ids):
            return _IndexNode(leaf=np.sort(ids))  # full duplication: no progress
        if len(left_ids) == 0 or len(right_ids) == 0:
            return _IndexNode(leaf=np.sort(ids))
        return _IndexNode(
            axis=axis,
            split=split,
            left=build(left_ids, depth + 1),
            right=build(right_ids, depth + 1),
        )

    root = build(np.arange(len(mesh), dtype=np.int32), 0)
    return MeshIndex(root=root, tri_lo=lo, tri_hi=hi, bounds=mesh_aabb(mesh))


def query_candidates(index: MeshIndex, box: Aabb) -> np.ndarray:
    """Triangle ids whose AABB may overlap ``box`` (closed), sorted, unique."""
    qlo = np.asarray(box.lo, dtype=np.float64)
    qhi = np.asarray(box.hi, dtype=np.float64)
    if not aabb_overlaps(index.bounds, box):
        return np.empty(0, dtype=np.int32)
    out: list[np.ndarray] = []
    stack = [index.root]
    while stack:
        node = stack.pop()
        if node.leaf is not None:
            ids = node.leaf
            keep = (
                (index.tri_lo[ids] <= qhi).all(axis=1)
                & (index.tri_hi[ids] >= qlo).all(axis=1)
            )
            if keep.any():
                out.append(ids[keep])
            continue
        if qlo[node.axis] <= node.split:
            stack.append(node.left)  # type: ignore[arg-type]
        if qhi[node.axis] >= node.split:
            stack.append(node.right)  # type: ignore[arg-type]
    if not out:
        return np.empty(0, dtype=np.int32)
    return np.unique(np.concatenate(out))
