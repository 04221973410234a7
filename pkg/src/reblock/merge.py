"""Coordinate-ascent block merging.

Two conventions over a parent's cell grid:

* **dissolved** — input block boundaries are forgotten; the active cell
  set of a class is re-tiled greedily from scratch.  A block seeds at the
  first active cell in raster order and repeatedly tries to grow by one
  cell layer along +x, +y, +z; growth must stay inside the parent, within
  the merge-size limit, and cover only active cells.  Three consecutive
  blocked axes (or token expiry, or consuming every active cell) emit the
  block and deactivate its cells.

* **persistent** — every input block keeps its identity: blocks take
  turns (smallest first) absorbing whole neighbouring blocks across their
  +x/+y/+z faces.  An absorption is feasible only when the face's delta
  slab contains no foreign cell, all adjoining blocks have one uniform
  length along the growth axis, and their combined cell count exactly
  tiles the extension box — so every output block is a rectangle and
  every input block lands wholly inside exactly one output block.

Eight scan patterns (mirroring the grid along any subset of axes) give
the greedy sweep eight different vantage points; the multi-scan driver
keeps whichever result scores best under the chosen objective.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import EmptyInput, OutOfBounds, ValidationError
from .lattice import IntTriple, raster_index, subscript_of

Convention = Literal["dissolved", "persistent"]
Objective = Literal["count", "aspect"]

ALL_SCAN_PATTERNS: tuple[int, ...] = tuple(range(8))


@dataclass(frozen=True)
class MergeParams:
    """Knobs shared by both conventions.

    ``token_life`` caps uninterrupted growth cycles per possession turn
    (None = unlimited); ``max_dims`` caps merged cell dimensions (None =
    the parent itself); ``scan_patterns`` are indices 0..7 with bit 0/1/2
    flipping x/y/z.
    """

    convention: Convention = "dissolved"
    objective: Objective = "count"
    token_life: int | None = None
    max_dims: IntTriple | None = None
    scan_patterns: tuple[int, ...] = ALL_SCAN_PATTERNS

    def __post_init__(self) -> None:
        if self.convention not in ("dissolved", "persistent"):
            raise ValidationError(f"unknown convention '{self.convention}'")
        if self.objective not in ("count", "aspect"):
            raise ValidationError(f"unknown objective '{self.objective}'")
        if self.token_life is not None and self.token_life < 1:
            raise ValidationError("token life span must be positive")
        if not self.scan_patterns:
            raise ValidationError("at least one scan pattern is required")
        for p in self.scan_patterns:
            if not 0 <= p <= 7:
                raise ValidationError(f"scan pattern {p} outside 0..7")
        if self.max_dims is not None and any(m < 1 for m in self.max_dims):
            raise ValidationError("max merge dims must be positive")


@dataclass(frozen=True)
class MergedBlock:
    """One output block, as a cell box local to its parent."""

    cell_min: IntTriple
    cell_dims: IntTriple
    label: int

    def n_cells(self) -> int:
        sx, sy, sz = self.cell_dims
        return sx * sy * sz


def _box_slices(n: Sequence[int], s: Sequence[int]) -> tuple[slice, slice, slice]:
    """Grid slices for the cell box [n, n+s); arrays are indexed [z, y, x]."""
    return (
        slice(n[2], n[2] + s[2]),
        slice(n[1], n[1] + s[1]),
        slice(n[0], n[0] + s[0]),
    )


def pool(theta: np.ndarray, value: int, n: IntTriple, k: IntTriple) -> int:
    """Count cells equal to ``value`` inside the box [n, n+k)."""
    kz, ky, kx = theta.shape
    for axis, limit in enumerate((kx, ky, kz)):
        if n[axis] < 0 or n[axis] + k[axis] > limit:
            raise OutOfBounds(f"box {n}+{k} outside the {theta.shape} grid")
    return int((theta[_box_slices(n, k)] == value).sum())


# ---------------------------------------------------------------------------
# dissolved convention
# ---------------------------------------------------------------------------

def coalesce_binary(
    theta: np.ndarray,
    label: int,
    max_dims: IntTriple | None = None,
    token_life: int | None = None,
    turn_log: list[tuple[int, int]] | None = None,
) -> list[MergedBlock]:
    """Greedy re-tiling of the active (=1) cells of a binary occupancy map.

    The input map is not modified.  ``turn_log`` (if given) records
    ``(block_ordinal, growth_cycles)`` per emitted block.
    """
    theta = np.array(theta, dtype=np.uint8)
    kz, ky, kx = theta.shape
    counts = (kx, ky, kz)
    mx, my, mz = counts if max_dims is None else max_dims
    flat = theta.ravel()
    n_occupant = int(flat.sum())
    out: list[MergedBlock] = []
    count = 0

    while True:
        remaining = n_occupant - count
        if remaining == 0:
            break
        first = int(flat.argmax())
        if remaining == 1:
            n = subscript_of(first, counts)
            out.append(MergedBlock(n, (1, 1, 1), label))
            if turn_log is not None:
                turn_log.append((len(out) - 1, 0))
            break
        nx, ny, nz = subscript_of(first, counts)
        sx = sy = sz = 1
        i = token_life
        cycles = 0
        while True:
            barriers = 0
            cycles += 1
            # +x: one new slab of cells at x = nx+sx .. nx+dx
            dx = min(sx + 1, kx - nx)
            if (
                dx <= mx
                and sy <= my
                and sz <= mz
                and dx > sx
                and theta[nz : nz + sz, ny : ny + sy, nx + sx : nx + dx].all()
            ):
                sx = dx
            else:
                barriers += 1
            dy = min(sy + 1, ky - ny)
            if (
                sx <= mx
                and dy <= my
                and sz <= mz
                and dy > sy
                and theta[nz : nz + sz, ny + sy : ny + dy, nx : nx + sx].all()
            ):
                sy = dy
            else:
                barriers += 1
            dz = min(sz + 1, kz - nz)
            if (
                sx <= mx
                and sy <= my
                and dz <= mz
                and dz > sz
                and theta[nz + sz : nz + dz, ny : ny + sy, nx : nx + sx].all()
            ):
                sz = dz
            else:
                barriers += 1
            if i is not None:
                i -= 1
            if count + sx * sy * sz == n_occupant or barriers == 3 or i == 0:
                break
        out.append(MergedBlock((nx, ny, nz), (sx, sy, sz), label))
        if turn_log is not None:
            turn_log.append((len(out) - 1, cycles))
        theta[nz : nz + sz, ny : ny + sy, nx : nx + sx] = 0
        count += sx * sy * sz
    return out


# ---------------------------------------------------------------------------
# persistent convention
# ---------------------------------------------------------------------------

@dataclass
class MergeRecord:
    """Mutable bookkeeping for one input block during persistent merging."""

    cell_min: IntTriple
    dims: list[int]
    label: int
    ordinal: int
    n_prev: int = 0
    n_curr: int = 0
    subsumed: bool = False


def feasible_cell_expansion(
    theta: np.ndarray,
    records: list[MergeRecord],
    b: int,
    corner_lo: IntTriple,
    corner_hi: IntTriple,
    axis: int,
    max_dims: IntTriple,
) -> bool:
    """Try to absorb the blocks behind one face of block ``b``.

    ``corner_lo``/``corner_hi`` bound the one-cell-thick delta slab just
    beyond the face, in (x, y, z) cell coordinates.  On success the
    absorbed records are marked subsumed, their cells repainted to ``b``,
    and ``b``'s dims and cell counts updated; on failure nothing changes.
    """
    kz, ky, kx = theta.shape
    if corner_lo[0] >= kx or corner_lo[1] >= ky or corner_lo[2] >= kz:
        return False
    region = theta[
        corner_lo[2] : corner_hi[2],
        corner_lo[1] : corner_hi[1],
        corner_lo[0] : corner_hi[0],
    ]
    if (region == -1).any():
        return False  # at least one foreign cell
    neighbours = np.unique(region)
    lengths = {records[int(nb)].dims[axis] for nb in neighbours}
    if len(lengths) != 1:
        return False  # failed uniform length requirement
    n_extend = lengths.pop()
    absorbable = [int(nb) for nb in neighbours if not records[int(nb)].subsumed]

    rec = records[b]
    new_dims = list(rec.dims)
    new_dims[axis] += n_extend
    for c in range(3):
        if new_dims[c] > max_dims[c]:
            return False
    cross = 1
    for c in range(3):
        if c != axis:
            cross *= rec.dims[c]
    n_region_cells = sum(records[nb].n_curr for nb in absorbable)
    if n_region_cells != n_extend * cross:
        return False  # join would not be a full rectangle

    for nb in absorbable:
        other = records[nb]
        other.subsumed = True
        theta[_box_slices(other.cell_min, other.dims)] = b
    rec.n_prev = rec.n_curr
    rec.n_curr += n_region_cells
    rec.dims[axis] += n_extend
    return True


def coalesce_persistent(
    boxes: Sequence[tuple[IntTriple, IntTriple]],
    counts: IntTriple,
    label: int,
    max_dims: IntTriple | None = None,
    token_life: int | None = None,
    turn_log: list[tuple[int, int]] | None = None,
) -> list[MergedBlock]:
    """Merge whole input blocks without ever splitting one.

    ``boxes`` are the (cell_min, cell_dims) of one class's blocks inside
    one parent; they must be pairwise disjoint.  Smaller blocks move
    first ("priority gives smaller blocks the earliest opportunity to
    grow"); passes repeat until no block's cell count changes.
    """
    kx, ky, kz = counts
    m = counts if max_dims is None else max_dims
    theta = np.full((kz, ky, kx), -1, dtype=np.int64)
    records: list[MergeRecord] = []
    for ordinal, (n, s) in enumerate(boxes):
        if min(n) < 0 or min(s) < 1:
            raise ValidationError("input blocks overlap or leave the parent")
        window = theta[_box_slices(n, s)]
        if window.shape != (s[2], s[1], s[0]) or (window != -1).any():
            raise ValidationError("input blocks overlap or leave the parent")
        window[:] = ordinal
        records.append(
            MergeRecord(
                cell_min=tuple(n),
                dims=list(s),
                label=label,
                ordinal=ordinal,
                n_prev=0,
                n_curr=s[0] * s[1] * s[2],
            )
        )

    while True:
        order = sorted(
            (r for r in records if not r.subsumed),
            key=lambda r: (r.n_curr, raster_index(r.cell_min, counts), r.ordinal),
        )
        if len(order) <= 1:
            break
        grew = False
        for rec in order:
            rec.n_prev = rec.n_curr
            if rec.subsumed:
                continue
            at_turn_start = rec.n_curr
            i = token_life
            nx, ny, nz = rec.cell_min
            sx, sy, sz = rec.dims
            cycles = 0
            while True:
                barriers = 0
                cycles += 1
                dx = min(sx + 1, kx - nx)
                if dx > sx and feasible_cell_expansion(
                    theta,
                    records,
                    rec.ordinal,
                    (nx + sx, ny, nz),
                    (nx + dx, ny + sy, nz + sz),
                    0,
                    m,
                ):
                    sx = rec.dims[0]
                else:
                    barriers += 1
                dy = min(sy + 1, ky - ny)
                if dy > sy and feasible_cell_expansion(
                    theta,
                    records,
                    rec.ordinal,
                    (nx, ny + sy, nz),
                    (nx + sx, ny + dy, nz + sz),
                    1,
                    m,
                ):
                    sy = rec.dims[1]
                else:
                    barriers += 1
                dz = min(sz + 1, kz - nz)
                if dz > sz and feasible_cell_expansion(
                    theta,
                    records,
                    rec.ordinal,
                    (nx, ny, nz + sz),
                    (nx + sx, ny + sy, nz + dz),
                    2,
                    m,
                ):
                    sz = rec.dims[2]
                else:
                    barriers += 1
                if i is not None:
                    i -= 1
                if (
                    (sx == kx - nx and sy == ky - ny and sz == kz - nz)
                    or barriers == 3
                    or i == 0
                ):
                    break
            if turn_log is not None:
                turn_log.append((rec.ordinal, cycles))
            if rec.n_curr != at_turn_start:
                grew = True
        # a pass without a single absorption is the fixed point; comparing
        # n_prev/n_curr over *all* records would deadlock on blocks that
        # grew and were then subsumed inside one pass (stale counters)
        if not grew:
            break

    return [
        MergedBlock(r.cell_min, (r.dims[0], r.dims[1], r.dims[2]), r.label)
        for r in records
        if not r.subsumed
    ]


# ---------------------------------------------------------------------------
# scan patterns
# ---------------------------------------------------------------------------

def scan_flips(pattern: int) -> tuple[bool, bool, bool]:
    """Which axes pattern 0..7 mirrors (bit 0 = x, bit 1 = y, bit 2 = z)."""
    return bool(pattern & 1), bool(pattern & 2), bool(pattern & 4)


def permute_grid(grid: np.ndarray, pattern: int) -> np.ndarray:
    """Mirror a [z, y, x]-indexed grid along the pattern's axes."""
    fx, fy, fz = scan_flips(pattern)
    out = grid
    if fx:
        out = out[:, :, ::-1]
    if fy:
        out = out[:, ::-1, :]
    if fz:
        out = out[::-1, :, :]
    return out


def permute_box(
    cell_min: IntTriple, cell_dims: IntTriple, counts: IntTriple, pattern: int
) -> IntTriple:
    """Min vertex of a cell box in the mirrored frame (an involution)."""
    flips = scan_flips(pattern)
    out = []
    for axis in range(3):
        if flips[axis]:
            out.append(counts[axis] - (cell_min[axis] + cell_dims[axis]))
        else:
            out.append(cell_min[axis])
    return (out[0], out[1], out[2])


# ---------------------------------------------------------------------------
# objectives and the multi-scan driver
# ---------------------------------------------------------------------------

def aspect_ratio_objective(
    blocks: Sequence[MergedBlock], min_dims: Sequence[float]
) -> float:
    """Volume-weighted mean of max/min real block dimension."""
    if not blocks:
        raise EmptyInput("aspect-ratio objective over an empty block list")
    total_v = 0.0
    acc = 0.0
    for b in blocks:
        d = [b.cell_dims[c] * float(min_dims[c]) for c in range(3)]
        v = d[0] * d[1] * d[2]
        total_v += v
        acc += v * (max(d) / min(d))
    return acc / total_v


def objective_value(
    blocks: Sequence[MergedBlock],
    min_dims: Sequence[float],
    objective: Objective,
) -> float | tuple[int, float]:
    ar = aspect_ratio_objective(blocks, min_dims)
    if objective == "aspect":
        return ar
    return (len(blocks), ar)


def merge_class(
    boxes: Sequence[tuple[IntTriple, IntTriple]],
    counts: IntTriple,
    min_dims: Sequence[float],
    params: MergeParams,
    label: int,
) -> list[MergedBlock]:
    """Best merge of one class's blocks over the configured scan patterns.

    Every pattern mirrors the problem, runs the configured convention
    with the standard raster scan, mirrors the result back, and scores
    it; ties keep the lowest pattern index.
    """
    if not boxes:
        return []
    for axis in range(3):
        limit = counts[axis] if params.max_dims is None else params.max_dims[axis]
        if limit > counts[axis]:
            raise ValidationError(
                "max merge dims cannot exceed the parent cell dimensions"
            )
    best: list[MergedBlock] | None = None
    best_score: float | tuple[int, float] | None = None
    for pattern in params.scan_patterns:
        merged = _merge_one_pattern(boxes, counts, params, label, pattern)
        score = objective_value(merged, min_dims, params.objective)
        if best_score is None or score < best_score:
            best = merged
            best_score = score
    assert best is not None
    return best


def _merge_one_pattern(
    boxes: Sequence[tuple[IntTriple, IntTriple]],
    counts: IntTriple,
    params: MergeParams,
    label: int,
    pattern: int,
) -> list[MergedBlock]:
    kx, ky, kz = counts
    flipped = [
        (permute_box(n, s, counts, pattern), s) for n, s in boxes
    ]
    if params.convention == "dissolved":
        theta = np.zeros((kz, ky, kx), dtype=np.uint8)
        for n, s in flipped:
            theta[_box_slices(n, s)] = 1
        merged = coalesce_binary(
            theta, label, max_dims=params.max_dims, token_life=params.token_life
        )
    else:
        merged = coalesce_persistent(
            flipped,
            counts,
            label,
            max_dims=params.max_dims,
            token_life=params.token_life,
        )
    return [
        MergedBlock(
            permute_box(b.cell_min, b.cell_dims, counts, pattern),
            b.cell_dims,
            b.label,
        )
        for b in merged
    ]
