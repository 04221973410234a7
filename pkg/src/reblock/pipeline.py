"""End-to-end restructuring: overlap → decompose → classify → merge → tag.

The per-parent middle stages are independent and run on a process pool;
everything that crosses parents (overlap detection, tagging, assembly)
is single-threaded and order-stable, so output models are byte-identical
for any thread count.

Two consolidation regimes are supported.  ``preclassified`` (the
default) folds each cell's per-surface sidedness into its merge class,
so no output block ever mixes cells from both sides of a surface.
``legacy-two-set`` merges on intersect/non-intersect alone and then
derives each merged block's sidedness from a single ray at its centroid
— cheaper, but a block straddling a surface's support edge can swallow
cells whose own classification disagrees.  Both are kept so the
difference stays measurable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import ReblockError, ValidationError
from .intersection import OverlapMap, detect_overlaps, write_overlap_csv
from .lattice import (
    Block,
    BlockModel,
    IntTriple,
    LatticeSpec,
    paint_parent,
    subscript_of,
)
from .merge import MergeParams, merge_class
from .mesh import (
    MeshIndex,
    RefineParams,
    TriangleMesh,
    build_index,
    integrity_check,
    load_mesh,
    refine_mesh,
)
from .parallel import parallel_map
from .sidedness import (
    SIDE_ABOVE,
    SIDE_BELOW,
    cast_parity_many,
    classify_cells,
    write_sidedness_csv,
)
from .tagging import ACROSS, TaggingInstruction, apply_tagging

Mode = Literal["preclassified", "legacy-two-set"]

# Per-surface block position: tagging's {+1, 0, -1}, plus a sentinel for
# "not classified here — cast a ray from the block centroid".
POS_RECAST = 2


@dataclass(frozen=True)
class PipelineConfig:
    """Everything restructure needs besides the model itself."""

    instructions: tuple[TaggingInstruction, ...]
    merge_params: MergeParams = MergeParams()
    mode: Mode = "preclassified"
    refine_params: RefineParams | None = None
    emit_diagnostics: bool = False
    diagnostics_dir: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("preclassified", "legacy-two-set"):
            raise ValidationError(f"unknown consolidation mode '{self.mode}'")
        if self.emit_diagnostics and self.diagnostics_dir is None:
            raise ValidationError("diagnostics need a directory to land in")


def load_surfaces(
    instructions: Sequence[TaggingInstruction],
    refine_params: RefineParams | None = None,
) -> list[tuple[TriangleMesh, MeshIndex]]:
    """Load, sanity-check, optionally refine, and index each surface."""
    out: list[tuple[TriangleMesh, MeshIndex]] = []
    for instr in instructions:
        path = Path(instr.surface_path)
        if not path.is_file():
            raise ValidationError(f"surface file not found: {path}")
        mesh, _ = integrity_check(load_mesh(path))
        if refine_params is not None:
            mesh = refine_mesh(mesh, refine_params)
        out.append((mesh, build_index(mesh)))
    return out


# ---------------------------------------------------------------------------
# per-parent worker
# ---------------------------------------------------------------------------

# Read-only context shared by every worker; sent once per process by the
# pool initializer (or set in-process for single-threaded runs).
_CTX: dict = {}


def _set_context(ctx: dict) -> None:
    _CTX.clear()
    _CTX.update(ctx)


@dataclass
class _ParentOut:
    parent: IntTriple
    blocks: list[tuple[IntTriple, IntTriple, int]]
    positions: np.ndarray  # (n_blocks, n_surfaces) int8
    majorities: np.ndarray  # (n_blocks, n_surfaces) int8
    classification: object | None = None


def _restructure_parent(
    task: tuple[IntTriple, list[Block], dict[int, np.ndarray]],
) -> _ParentOut:
    parent, blocks, per_surface = task
    try:
        return _restructure_parent_inner(parent, blocks, per_surface)
    except ReblockError as exc:
        raise type(exc)(f"parent {parent}: {exc}") from None


def _restructure_parent_inner(
    parent: IntTriple,
    blocks: list[Block],
    per_surface: dict[int, np.ndarray],
) -> _ParentOut:
    spec: LatticeSpec = _CTX["spec"]
    surfaces = _CTX["surfaces"]
    directions = _CTX["directions"]
    params: MergeParams = _CTX["params"]
    preclassified = _CTX["mode"] == "preclassified"
    n_surfaces = len(surfaces)
    counts = spec.cell_counts
    kx, ky, kz = counts

    labels_grid, owner = paint_parent(spec, blocks)
    flat_labels = labels_grid.reshape(-1)
    occupied = np.flatnonzero(owner.reshape(-1) != -1)

    cls = classify_cells(
        spec, parent, surfaces, OverlapMap(parents={parent: per_surface}), directions
    )
    sides_grid = cls.sides.reshape(len(cls.surface_ids), kz, ky, kx)

    columns = [flat_labels]
    for row in range(len(cls.surface_ids)):
        columns.append(cls.intersects[row].astype(np.int64))
        if preclassified:
            columns.append(cls.sides[row].astype(np.int64))
    keys = np.stack(columns, axis=1)[occupied]
    classes, inverse = np.unique(keys, axis=0, return_inverse=True)

    out_blocks: list[tuple[IntTriple, IntTriple, int]] = []
    pos_rows: list[np.ndarray] = []
    maj_rows: list[np.ndarray] = []
    stride = 2 if preclassified else 1
    for class_id, key in enumerate(classes):
        cell_ids = occupied[inverse == class_id]
        label = int(key[0])
        boxes = [(subscript_of(int(i), counts), (1, 1, 1)) for i in cell_ids]
        merged = merge_class(boxes, counts, spec.min_dims, params, label)
        for b in merged:
            pos = np.full(n_surfaces, POS_RECAST, dtype=np.int8)
            maj = np.full(n_surfaces, SIDE_ABOVE, dtype=np.int8)
            nx, ny, nz = b.cell_min
            sx, sy, sz = b.cell_dims
            for row, sid in enumerate(cls.surface_ids):
                window = sides_grid[row, nz : nz + sz, ny : ny + sy, nx : nx + sx]
                above = int((window == SIDE_ABOVE).sum())
                maj[sid] = SIDE_ABOVE if above * 2 >= window.size else SIDE_BELOW
                if key[1 + row * stride]:
                    pos[sid] = ACROSS
                elif preclassified:
                    pos[sid] = np.int8(key[2 + row * stride])
            out_blocks.append((b.cell_min, b.cell_dims, b.label))
            pos_rows.append(pos)
            maj_rows.append(maj)

    return _ParentOut(
        parent=parent,
        blocks=out_blocks,
        positions=np.array(pos_rows, dtype=np.int8).reshape(len(out_blocks), n_surfaces),
        majorities=np.array(maj_rows, dtype=np.int8).reshape(len(out_blocks), n_surfaces),
        classification=cls if _CTX.get("keep_classifications") else None,
    )


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def restructure(
    model: BlockModel,
    config: PipelineConfig,
    surfaces: Sequence[tuple[TriangleMesh, MeshIndex]] | None = None,
    threads: int = 1,
) -> BlockModel:
    """Restructure a model against the configured surfaces.

    Parents untouched by every surface pass through with their geometry
    intact (their labels still go through the tagging instructions);
    parents a surface crosses are rebuilt from cells, merged class by
    class, then tagged.  With no instructions the input is returned
    unchanged.
    """
    model.validate()
    if not config.instructions:
        return model
    if surfaces is None:
        surfaces = load_surfaces(config.instructions, config.refine_params)
    if len(surfaces) != len(config.instructions):
        raise ValidationError(
            f"{len(surfaces)} surfaces for {len(config.instructions)} instructions"
        )
    spec = model.spec
    directions = [i.positive_direction for i in config.instructions]
    overlap = detect_overlaps(model, surfaces)

    by_parent = model.by_parent()
    crossed = sorted(
        overlap.intersecting_parents(), key=lambda p: (p[2], p[1], p[0])
    )
    tasks = [
        (
            parent,
            [model.blocks[i] for i in by_parent[parent]],
            overlap.surfaces_of(parent),
        )
        for parent in crossed
        if parent in by_parent
    ]
    ctx = {
        "spec": spec,
        "surfaces": list(surfaces),
        "directions": directions,
        "params": config.merge_params,
        "mode": config.mode,
        "keep_classifications": config.emit_diagnostics,
    }
    results = parallel_map(
        _restructure_parent, tasks, threads, initializer=_set_context, initargs=(ctx,)
    )

    crossed_set = set(crossed)
    n_surfaces = len(surfaces)
    geometry: list[tuple[IntTriple, IntTriple, IntTriple, int]] = []
    for block in model.blocks:
        if block.parent not in crossed_set:
            geometry.append((block.parent, block.cell_min, block.cell_dims, block.label))
    n_pass = len(geometry)
    for res in results:
        for cell_min, cell_dims, label in res.blocks:
            geometry.append((res.parent, cell_min, cell_dims, label))

    positions = np.full((len(geometry), n_surfaces), POS_RECAST, dtype=np.int8)
    majorities = np.full((len(geometry), n_surfaces), SIDE_ABOVE, dtype=np.int8)
    row = n_pass
    for res in results:
        n = len(res.blocks)
        positions[row : row + n] = res.positions
        majorities[row : row + n] = res.majorities
        row += n

    centroids = np.array(
        [
            Block(p, n, s, lbl).centroid(spec)
            for p, n, s, lbl in geometry
        ],
        dtype=np.float64,
    ).reshape(len(geometry), 3)
    for sid, instr in enumerate(config.instructions):
        missing = np.flatnonzero(positions[:, sid] == POS_RECAST)
        if len(missing) == 0:
            continue
        mesh, index = surfaces[sid]
        batch = cast_parity_many(
            centroids[missing], mesh, index, instr.positive_direction
        )
        positions[missing, sid] = batch.sides

    input_labels = np.fromiter((g[3] for g in geometry), dtype=np.int64)
    labels = apply_tagging(positions, majorities, input_labels, config.instructions)

    out = BlockModel(
        spec,
        [
            Block(parent, cell_min, cell_dims, int(label))
            for (parent, cell_min, cell_dims, _), label in zip(geometry, labels)
        ],
    )
    out.validate()

    if config.emit_diagnostics:
        diag = Path(config.diagnostics_dir or ".")
        diag.mkdir(parents=True, exist_ok=True)
        write_overlap_csv(diag / "overlap.csv", overlap)
        write_sidedness_csv(
            diag / "sidedness.csv",
            spec,
            [r.classification for r in results if r.classification is not None],
            n_surfaces,
        )
    return out


def _merge_parent(
    task: tuple[IntTriple, list[tuple[IntTriple, IntTriple, int]]],
) -> list[tuple[IntTriple, IntTriple, int]]:
    parent, boxes = task
    try:
        spec: LatticeSpec = _CTX["spec"]
        params: MergeParams = _CTX["params"]
        by_label: dict[int, list[tuple[IntTriple, IntTriple]]] = {}
        for cell_min, dims, label in boxes:
            by_label.setdefault(label, []).append((cell_min, dims))
        out: list[tuple[IntTriple, IntTriple, int]] = []
        for label in sorted(by_label):
            merged = merge_class(
                by_label[label], spec.cell_counts, spec.min_dims, params, label
            )
            out.extend((b.cell_min, b.cell_dims, b.label) for b in merged)
        return out
    except ReblockError as exc:
        raise type(exc)(f"parent {parent}: {exc}") from None


def merge_model(
    model: BlockModel, params: MergeParams, threads: int = 1
) -> BlockModel:
    """Merge every parent's blocks class-by-class, in parallel over parents."""
    model.validate()
    by_parent = model.by_parent()
    parents = sorted(by_parent, key=lambda p: (p[2], p[1], p[0]))
    tasks = []
    for parent in parents:
        boxes = [
            (
                model.blocks[i].cell_min,
                model.blocks[i].cell_dims,
                model.blocks[i].label,
            )
            for i in by_parent[parent]
        ]
        tasks.append((parent, boxes))
    ctx = {"spec": model.spec, "params": params}
    results = parallel_map(
        _merge_parent, tasks, threads, initializer=_set_context, initargs=(ctx,)
    )
    blocks = [
        Block(parent, cell_min, cell_dims, label)
        for parent, merged in zip(parents, results)
        for cell_min, cell_dims, label in merged
    ]
    out = BlockModel(model.spec, blocks)
    out.validate()
    return out


def heal_and_merge(
    model: BlockModel, params: MergeParams | None = None, threads: int = 1
) -> BlockModel:
    """Re-merge a labelled model to heal fragmentation left by old boundaries.

    Healing dissolves block boundaries within each (parent, label) class,
    so blocks split by a surface that later lost its meaning coalesce
    again.
    """
    if params is None:
        params = MergeParams(convention="dissolved")
    if params.convention != "dissolved":
        raise ValidationError("healing requires the dissolved convention")
    return merge_model(model, params, threads)
