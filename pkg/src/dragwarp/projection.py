"""Project moved 3D points back onto the grid and rebuild the feature map.

Moved points claim cells by rounding their global x/y; collisions keep the
point with the largest z (nearest the viewer), ties keep the smaller
row-major source index so the result never depends on input order.  Cells
vacated by the move become voids and are filled from their four axis
neighbors, weighted by inverse distance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import IntEnum

import numpy as np

from .errors import AllVoid, ShapeMismatch
from .grid import FeatureGrid, Mask
from .geometry import DragPartition, PointCloud


class CellState(IntEnum):
    DRAGGED = 0
    STATIC_COPY = 1
    OUTSIDE = 2
    VOID = 3


@dataclass
class TargetCellMap:
    """Per-cell outcome of a warp: state, winning source cell, winning z."""

    state: np.ndarray  # (h, w) uint8 of CellState
    src: np.ndarray    # (h, w, 2) int64 (x, y), -1 where no source applies
    z: np.ndarray      # (h, w) float64, -inf where unclaimed

    @classmethod
    def empty(cls, h: int, w: int) -> "TargetCellMap":
        return cls(
            state=np.full((h, w), CellState.OUTSIDE, dtype=np.uint8),
            src=np.full((h, w, 2), -1, dtype=np.int64),
            z=np.full((h, w), -np.inf),
        )


@dataclass
class Diagnostics:
    moved: int = 0
    static: int = 0
    voids_filled: int = 0
    out_of_bounds: int = 0
    collisions: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def project_zbuffer(points: PointCloud, origin: np.ndarray, grid_shape: tuple[int, int]) -> tuple[TargetCellMap, Diagnostics]:
    """Claim grid cells for moved points with occlusion handling.

    Rounding is half-up on the global coordinates.  Out-of-bounds landings
    are dropped and counted; in-bounds landings on an already claimed cell
    count as collisions whichever point wins.
    """
    h, w = grid_shape
    cellmap = TargetCellMap.empty(h, w)
    diag = Diagnostics()
    if len(points.positions) == 0:
        return cellmap, diag

    global_pos = points.positions + np.asarray(origin, dtype=np.float64)
    cx = np.floor(global_pos[:, 0] + 0.5).astype(np.int64)
    cy = np.floor(global_pos[:, 1] + 0.5).astype(np.int64)
    z = points.positions[:, 2]
    src = points.src

    # Row-major (y, then x) source order; z ties keep the earlier source.
    order = np.lexsort((src[:, 0], src[:, 1]))
    for i in order:
        x, y = cx[i], cy[i]
        if x < 0 or x >= w or y < 0 or y >= h:
            diag.out_of_bounds += 1
            continue
        if cellmap.state[y, x] == CellState.DRAGGED:
            diag.collisions += 1
            if z[i] <= cellmap.z[y, x]:
                continue
        cellmap.state[y, x] = CellState.DRAGGED
        cellmap.src[y, x] = src[i]
        cellmap.z[y, x] = z[i]
    return cellmap, diag


def assemble_warped_grid(
    src_grid: FeatureGrid,
    mask: Mask,
    partition: DragPartition,
    cellmap: TargetCellMap,
) -> tuple[FeatureGrid, np.ndarray, TargetCellMap]:
    """Combine dragged, static, and outside features into the warped grid.

    Returns the grid (void cells zeroed), the void mask, and the completed
    cell map.  Dragged features win over everything they land on; source
    cells of movable points that nothing claimed become voids.
    """
    h, w = src_grid.height, src_grid.width
    if mask.bits.shape != (h, w) or cellmap.state.shape != (h, w):
        raise ShapeMismatch("grid, mask and cell map shapes differ")

    out = src_grid.data.copy()
    dragged = cellmap.state == CellState.DRAGGED
    if dragged.any():
        ys, xs = np.nonzero(dragged)
        sx = cellmap.src[ys, xs, 0]
        sy = cellmap.src[ys, xs, 1]
        out[ys, xs] = src_grid.data[sy, sx]

    movable_src = np.zeros((h, w), dtype=bool)
    if len(partition.movable.src):
        movable_src[partition.movable.src[:, 1], partition.movable.src[:, 0]] = True
    void = movable_src & ~dragged
    out[void] = 0.0

    state = np.where(
        dragged, np.uint8(CellState.DRAGGED),
        np.where(void, np.uint8(CellState.VOID),
                 np.where(mask.bits, np.uint8(CellState.STATIC_COPY), np.uint8(CellState.OUTSIDE))),
    )
    complete = TargetCellMap(state=state.astype(np.uint8), src=cellmap.src, z=cellmap.z)
    return FeatureGrid(out), void, complete


def _nearest_nonvoid_in_direction(void: np.ndarray, y: int, x: int, dy: int, dx: int) -> int:
    """Steps to the nearest pre-fill non-void cell along (dy, dx); 0 if none."""
    h, w = void.shape
    step = 1
    yy, xx = y + dy, x + dx
    while 0 <= yy < h and 0 <= xx < w:
        if not void[yy, xx]:
            return step
        step += 1
        yy += dy
        xx += dx
    return 0


def bnni_fill(grid: FeatureGrid, void: np.ndarray) -> tuple[FeatureGrid, int]:
    """Fill void cells from their four axis-direction nearest neighbors.

    Weights are inverse distances normalized over the directions that found a
    neighbor.  All lookups read the pre-fill grid, so fill order is
    irrelevant.  Voids with no axis neighbor at all copy the Euclidean
    nearest non-void cell.
    """
    if void.shape != (grid.height, grid.width):
        raise ShapeMismatch("void mask shape differs from grid")
    if not void.any():
        return grid, 0
    if void.all():
        raise AllVoid("no features left to interpolate from")

    src = grid.data
    out = src.copy()
    nonvoid_cells = np.stack(np.nonzero(~void), axis=1)  # (m, 2) as (y, x)
    filled = 0
    for y, x in np.argwhere(void):
        weights = []
        feats = []
        for dy, dx in ((-1, 0), (0, 1), (1, 0), (0, -1)):
            steps = _nearest_nonvoid_in_direction(void, y, x, dy, dx)
            if steps:
                weights.append(1.0 / steps)
                feats.append(src[y + dy * steps, x + dx * steps])
        if weights:
            wsum = sum(weights)
            acc = np.zeros(grid.depth_dim)
            for w_i, f_i in zip(weights, feats):
                acc += (w_i / wsum) * f_i
            out[y, x] = acc
        else:
            d2 = ((nonvoid_cells - np.array([y, x])) ** 2).sum(axis=1)
            ny, nx = nonvoid_cells[int(np.argmin(d2))]
            out[y, x] = src[ny, nx]
        filled += 1
    return FeatureGrid(out), filled
