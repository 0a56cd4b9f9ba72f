"""Depth-lifted point cloud construction and hybrid rigid/non-rigid dragging.

The pipeline per drag request:

1. rescale the depth map onto the grid and a fixed numeric range,
2. lift masked cells into a point cloud in local coordinates around an
   estimated object origin,
3. split the cloud into movable and static points by depth proximity to the
   primary handle,
4. move the movable points: a rotation + scaled translation driven by the
   first drag pair, refined by a localized radial-basis displacement field
   constrained by every drag pair and a few automatically chosen anchors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AmbiguousAxis,
    DegenerateDepthRange,
    DegenerateVector,
    DuplicateControlPoint,
    EmptyMask,
    HandleOutsideMask,
    ShapeMismatch,
    SingularSystem,
)
from .grid import DepthMap, DragPair, Mask, PcddParams

EPS_DEGENERATE = 1e-9
PIVOT_FLOOR = 1e-12


@dataclass(frozen=True)
class PointCloud:
    """Points in local coordinates plus their source cells.

    ``positions[i] + origin`` recovers the global position of point ``i``;
    ``src[i]`` is its (x, y) source cell.
    """

    positions: np.ndarray  # (n, 3) float64, local coordinates
    src: np.ndarray        # (n, 2) int64, (x, y) cells
    origin: np.ndarray     # (3,) float64, global coordinates


@dataclass(frozen=True)
class DragPartition:
    movable: PointCloud
    static_pts: PointCloud


@dataclass(frozen=True)
class RbfField:
    """Displacement field s(p) = sum_k w_k * phi(p, c_k), multiquadric phi."""

    control_points: np.ndarray  # (m, 3)
    weights: np.ndarray         # (m, 3)
    mu: float


def bilinear_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Sample-based bilinear resize with corner alignment.

    Output cell (i, j) samples the input at fractional position
    ``(i * (H-1)/(out_h-1), j * (W-1)/(out_w-1))``; degenerate output axes
    sample the input midpoint.  Identity when shapes already match.
    """
    in_h, in_w = values.shape
    if (in_h, in_w) == (out_h, out_w):
        return values.copy()
    ys = (np.arange(out_h) * (in_h - 1) / (out_h - 1)) if out_h > 1 else np.array([(in_h - 1) / 2.0])
    xs = (np.arange(out_w) * (in_w - 1) / (out_w - 1)) if out_w > 1 else np.array([(in_w - 1) / 2.0])
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = values[np.ix_(y0, x0)] * (1 - fx) + values[np.ix_(y0, x1)] * fx
    bot = values[np.ix_(y1, x0)] * (1 - fx) + values[np.ix_(y1, x1)] * fx
    return top * (1 - fy[:, 0])[:, None] + bot * fy[:, 0][:, None]


def rescale_depth(depth: DepthMap, target: tuple[int, int], dp_min: float, dp_max: float) -> DepthMap:
    """Resize to ``target`` and affinely map the value range onto [dp_min, dp_max]."""
    if not dp_max > dp_min:
        raise DegenerateDepthRange(f"dp_max must exceed dp_min, got [{dp_min}, {dp_max}]")
    vals = depth.values
    if vals.min() == vals.max():
        raise DegenerateDepthRange("constant depth map cannot be rescaled")
    resized = bilinear_resize(vals, target[0], target[1])
    lo, hi = resized.min(), resized.max()
    if lo == hi:
        raise DegenerateDepthRange("depth collapsed to a constant after resizing")
    return DepthMap(dp_min + (resized - lo) / (hi - lo) * (dp_max - dp_min))


def _masked_cells(mask: Mask) -> np.ndarray:
    """Masked cells as (n, 2) int (x, y), row-major order."""
    ys, xs = np.nonzero(mask.bits)
    return np.stack([xs, ys], axis=1).astype(np.int64)


def estimate_origin(mask: Mask, depth: DepthMap, d_o: float) -> np.ndarray:
    """Object origin: mask centroid in x/y, depth near the centroid minus
    the slack distance in z (pushing the pivot behind the visible surface).

    Ties for the centroid-nearest cell break toward the smallest row-major
    index.
    """
    if mask.bits.shape != depth.values.shape:
        raise ShapeMismatch("mask and depth shapes differ")
    cells = _masked_cells(mask)
    if len(cells) == 0:
        raise EmptyMask("origin estimation needs a non-empty mask")
    centroid = cells.astype(np.float64).mean(axis=0)
    d2 = ((cells - centroid) ** 2).sum(axis=1)
    nearest = cells[int(np.argmin(d2))]
    z = depth.values[nearest[1], nearest[0]] - d_o
    return np.array([centroid[0], centroid[1], z], dtype=np.float64)


def build_point_cloud(mask: Mask, depth: DepthMap, origin: np.ndarray) -> PointCloud:
    if mask.bits.shape != depth.values.shape:
        raise ShapeMismatch("mask and depth shapes differ")
    cells = _masked_cells(mask)
    if len(cells) == 0:
        raise EmptyMask("cannot build a point cloud from an empty mask")
    z = depth.values[cells[:, 1], cells[:, 0]]
    global_pos = np.column_stack([cells[:, 0].astype(np.float64), cells[:, 1].astype(np.float64), z])
    return PointCloud(positions=global_pos - origin, src=cells, origin=np.asarray(origin, dtype=np.float64))


def handle_cell(mask: Mask, point: tuple[float, float]) -> tuple[int, int]:
    """Nearest cell (half-up rounding) of a continuous grid coordinate."""
    x = int(np.floor(point[0] + 0.5))
    y = int(np.floor(point[1] + 0.5))
    x = min(max(x, 0), mask.width - 1)
    y = min(max(y, 0), mask.height - 1)
    return x, y


def filter_drag_subject(cloud: PointCloud, primary: DragPair, d_shield: float) -> DragPartition:
    """Split masked points into movable and static by depth proximity to the
    primary handle.  Points farther than ``d_shield`` in z stay static."""
    mask_lookup = {(int(x), int(y)): i for i, (x, y) in enumerate(cloud.src)}
    hx = int(np.floor(primary.handle[0] + 0.5))
    hy = int(np.floor(primary.handle[1] + 0.5))
    idx = mask_lookup.get((hx, hy))
    if idx is None:
        raise HandleOutsideMask(f"primary handle cell ({hx}, {hy}) is not masked")
    z_handle = cloud.positions[idx, 2]
    movable_sel = np.abs(cloud.positions[:, 2] - z_handle) <= d_shield
    def subset(sel):
        return PointCloud(cloud.positions[sel].copy(), cloud.src[sel].copy(), cloud.origin)
    return DragPartition(movable=subset(movable_sel), static_pts=subset(~movable_sel))


def rodrigues_rotation(a1: np.ndarray, b1: np.ndarray) -> np.ndarray:
    """Rotation taking direction a1 to direction b1: R = I + sin(t) K + (1-cos(t)) K^2.

    Parallel inputs give the identity; antiparallel inputs have no unique
    axis and are rejected.
    """
    a1 = np.asarray(a1, dtype=np.float64)
    b1 = np.asarray(b1, dtype=np.float64)
    na, nb = np.linalg.norm(a1), np.linalg.norm(b1)
    if na <= EPS_DEGENERATE or nb <= EPS_DEGENERATE:
        raise DegenerateVector(f"rotation vectors must be non-null, norms ({na:g}, {nb:g})")
    cos_t = float(np.clip(np.dot(a1, b1) / (na * nb), -1.0, 1.0))
    axis = np.cross(a1, b1)
    sin_scale = np.linalg.norm(axis) / (na * nb)
    if sin_scale <= EPS_DEGENERATE:
        if cos_t > 0:
            return np.eye(3)
        raise AmbiguousAxis("antiparallel drag vectors define no rotation axis")
    u = axis / np.linalg.norm(axis)
    theta = float(np.arccos(cos_t))
    k = np.array([
        [0.0, -u[2], u[1]],
        [u[2], 0.0, -u[0]],
        [-u[1], u[0], 0.0],
    ])
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def rigid_transform(points: np.ndarray, rot: np.ndarray, a1: np.ndarray, b1: np.ndarray, alpha: float) -> np.ndarray:
    """p -> R p + alpha (b1 - R a1), rowwise over (n, 3) points."""
    translation = alpha * (np.asarray(b1, dtype=np.float64) - rot @ np.asarray(a1, dtype=np.float64))
    return points @ rot.T + translation


def select_fixed_points(movable: np.ndarray, handles: np.ndarray, k: int) -> np.ndarray:
    """Pick up to ``k`` anchor points by farthest-point sampling.

    The first anchor maximizes the minimum distance to the handles; each
    further anchor maximizes the minimum distance to handles plus already
    chosen anchors.  Candidates coinciding with an existing control point are
    skipped; ties break toward the earlier input index.
    """
    movable = np.asarray(movable, dtype=np.float64).reshape(-1, 3)
    handles = np.asarray(handles, dtype=np.float64).reshape(-1, 3)
    if k <= 0 or len(movable) == 0:
        return np.empty((0, 3))
    min_d = np.full(len(movable), np.inf)
    for h in handles:
        min_d = np.minimum(min_d, np.linalg.norm(movable - h, axis=1))
    chosen: list[int] = []
    for _ in range(min(k, len(movable))):
        best = int(np.argmax(min_d))
        if min_d[best] <= 0.0:
            break
        chosen.append(best)
        min_d = np.minimum(min_d, np.linalg.norm(movable - movable[best], axis=1))
        min_d[best] = -np.inf
    return movable[chosen].copy()


def multiquadric(dist: np.ndarray, mu: float) -> np.ndarray:
    return np.sqrt(1.0 + (mu * dist) ** 2)


def _gauss_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting; rejects tiny pivots."""
    a = a.astype(np.float64).copy()
    b = b.astype(np.float64).copy()
    n = a.shape[0]
    for col in range(n):
        pivot_row = col + int(np.argmax(np.abs(a[col:, col])))
        if np.abs(a[pivot_row, col]) < PIVOT_FLOOR:
            raise SingularSystem(f"pivot {a[pivot_row, col]:g} below {PIVOT_FLOOR:g} at column {col}")
        if pivot_row != col:
            a[[col, pivot_row]] = a[[pivot_row, col]]
            b[[col, pivot_row]] = b[[pivot_row, col]]
        factors = a[col + 1:, col] / a[col, col]
        a[col + 1:, col:] -= factors[:, None] * a[col, col:]
        b[col + 1:] -= factors[:, None] * b[col]
    x = np.zeros_like(b)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1:] @ x[row + 1:]) / a[row, row]
    return x


def resolve_mu(control_points: np.ndarray, mu: float | str) -> float:
    """Kernel radius: explicit value, or the reciprocal mean pairwise distance."""
    if mu != "auto":
        return float(mu)
    m = len(control_points)
    if m <= 1:
        return 1.0
    diffs = control_points[:, None, :] - control_points[None, :, :]
    dists = np.linalg.norm(diffs, axis=2)
    mean = dists[np.triu_indices(m, k=1)].mean()
    return 1.0 if mean == 0.0 else 1.0 / mean


def solve_rbf(handles: np.ndarray, displacements: np.ndarray, fixed: np.ndarray, mu: float | str) -> RbfField:
    """Fit weights so the field meets every constraint: the stated
    displacement at each handle, zero at each anchor."""
    handles = np.asarray(handles, dtype=np.float64).reshape(-1, 3)
    displacements = np.asarray(displacements, dtype=np.float64).reshape(-1, 3)
    fixed = np.asarray(fixed, dtype=np.float64).reshape(-1, 3)
    control = np.vstack([handles, fixed])
    if len(control) == 0:
        raise DuplicateControlPoint("need at least one control point")
    uniq = {tuple(row) for row in control}
    if len(uniq) != len(control):
        raise DuplicateControlPoint("control points must be pairwise distinct")
    mu_val = resolve_mu(control, mu)
    dists = np.linalg.norm(control[:, None, :] - control[None, :, :], axis=2)
    phi = multiquadric(dists, mu_val)
    rhs = np.vstack([displacements, np.zeros((len(fixed), 3))])
    weights = _gauss_solve(phi, rhs)
    return RbfField(control_points=control, weights=weights, mu=mu_val)


def eval_rbf(field: RbfField, points: np.ndarray) -> np.ndarray:
    """Field displacement at each query point, (n, 3) in and out."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dists = np.linalg.norm(pts[:, None, :] - field.control_points[None, :, :], axis=2)
    return multiquadric(dists, field.mu) @ field.weights


def gamma_weight(points: np.ndarray, handles: np.ndarray, fixed: np.ndarray) -> np.ndarray:
    """Locality weight in [0, 1]: 1 at handles, 0 at anchors, blended by
    nearest-distance ratio in between.  With no anchors the field applies
    everywhere (gamma = 1)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    handles = np.asarray(handles, dtype=np.float64).reshape(-1, 3)
    if len(fixed) == 0:
        return np.ones(len(pts))
    fixed = np.asarray(fixed, dtype=np.float64).reshape(-1, 3)
    min_a = np.linalg.norm(pts[:, None, :] - handles[None, :, :], axis=2).min(axis=1)
    min_f = np.linalg.norm(pts[:, None, :] - fixed[None, :, :], axis=2).min(axis=1)
    return min_f / (min_a + min_f)


def lift_pairs(pairs, depth: DepthMap, origin: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lift 2D drag pairs into local 3D: both endpoints take the depth at the
    handle's cell, keeping the drag vector parallel to the image plane."""
    a_pts, b_pts = [], []
    h, w = depth.values.shape
    for pair in pairs:
        hx = min(max(int(np.floor(pair.handle[0] + 0.5)), 0), w - 1)
        hy = min(max(int(np.floor(pair.handle[1] + 0.5)), 0), h - 1)
        z = depth.values[hy, hx]
        a_pts.append([pair.handle[0], pair.handle[1], z])
        b_pts.append([pair.target[0], pair.target[1], z])
    a = np.asarray(a_pts, dtype=np.float64) - origin
    b = np.asarray(b_pts, dtype=np.float64) - origin
    return a, b


def hybrid_drag(partition: DragPartition, pairs, params: PcddParams, depth: DepthMap) -> PointCloud:
    """Move the movable points: rigid stage from the first pair, then the
    localized non-rigid refinement from all pairs.

    A first pair whose lifted endpoints are too short to orient a rotation
    falls back to translation only.
    """
    if not pairs:
        raise HandleOutsideMask("at least one drag pair is required")
    movable = partition.movable
    origin = movable.origin
    a_local, b_local = lift_pairs(pairs, depth, origin)

    try:
        rot = rodrigues_rotation(a_local[0], b_local[0])
    except DegenerateVector:
        rot = np.eye(3)
    rigid = rigid_transform(movable.positions, rot, a_local[0], b_local[0], params.alpha)

    if params.beta != 0.0 and len(movable.positions) > 0:
        fixed = select_fixed_points(movable.positions, a_local, params.fixed_point_count)
        field = solve_rbf(a_local, b_local - a_local, fixed, params.mu)
        gamma = gamma_weight(rigid, a_local, fixed)
        moved = rigid + params.beta * gamma[:, None] * eval_rbf(field, rigid)
    else:
        moved = rigid

    return PointCloud(positions=moved, src=movable.src.copy(), origin=origin)
