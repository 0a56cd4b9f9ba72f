"""End-to-end orchestration: full warp pass and the guided sampling run."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry, projection, sampler
from .errors import HandleOutsideMask
from .grid import DepthMap, DragPair, FeatureGrid, Mask, PcddParams, luminance_depth
from .projection import Diagnostics, TargetCellMap
from .sampler import SamplerConfig


@dataclass
class WarpResult:
    warped: FeatureGrid
    diagnostics: Diagnostics
    cellmap: TargetCellMap
    depth: DepthMap
    displacements: list[dict]


def depth_for_grid(grid: FeatureGrid, depth: DepthMap | None) -> DepthMap:
    """Caller-supplied depth, or the luminance stand-in (channel mean for
    grids that are not RGB)."""
    if depth is not None:
        return depth
    if grid.depth_dim == 3:
        return luminance_depth(grid)
    return DepthMap(grid.data.mean(axis=2))


def warp_grid(
    grid: FeatureGrid,
    mask: Mask,
    depth_raw: DepthMap,
    pairs: tuple[DragPair, ...],
    params: PcddParams,
) -> WarpResult:
    """Run the whole drag pass: depth rescale, cloud build, hybrid drag,
    z-buffered projection, reassembly, and hole filling."""
    shape = (grid.height, grid.width)
    for pair in pairs:
        x, y = pair.handle
        if not (0 <= x < grid.width and 0 <= y < grid.height):
            raise HandleOutsideMask(f"handle ({x}, {y}) lies outside the {grid.width}x{grid.height} grid")
    depth = geometry.rescale_depth(depth_raw, shape, params.dp_min, params.dp_max)
    origin = geometry.estimate_origin(mask, depth, params.d_o)
    cloud = geometry.build_point_cloud(mask, depth, origin)
    partition = geometry.filter_drag_subject(cloud, pairs[0], params.d_shield)
    moved = geometry.hybrid_drag(partition, pairs, params, depth)
    cellmap, diag = projection.project_zbuffer(moved, origin, shape)
    warped, void, cellmap = projection.assemble_warped_grid(grid, mask, partition, cellmap)
    filled_grid, n_filled = projection.bnni_fill(warped, void)
    diag.moved = len(partition.movable.positions)
    diag.static = len(partition.static_pts.positions)
    diag.voids_filled = n_filled

    displacements = _landing_summary(pairs, moved, mask)
    return WarpResult(
        warped=filled_grid,
        diagnostics=diag,
        cellmap=cellmap,
        depth=depth,
        displacements=displacements,
    )


def _landing_summary(pairs, moved, mask: Mask) -> list[dict]:
    """Where the point that started at each handle cell ended up (global)."""
    by_src = {(int(x), int(y)): i for i, (x, y) in enumerate(moved.src)}
    out = []
    for pair in pairs:
        cell = geometry.handle_cell(mask, pair.handle)
        entry: dict = {"handle": list(pair.handle), "target": list(pair.target), "source_cell": list(cell)}
        idx = by_src.get(cell)
        if idx is None:
            entry["landing"] = None
        else:
            pos = moved.positions[idx] + moved.origin
            entry["landing"] = [float(pos[0]), float(pos[1])]
            entry["landing_cell"] = [int(np.floor(pos[0] + 0.5)), int(np.floor(pos[1] + 0.5))]
        out.append(entry)
    return out


def sample_grid(
    z0: FeatureGrid,
    config: SamplerConfig,
    prompts: tuple[str, str],
    dragspec=None,
    depth: DepthMap | None = None,
    predictor=None,
    max_steps: int | None = None,
    observer=None,
) -> tuple[FeatureGrid, int, Diagnostics | None]:
    """Noise the latent, optionally warp it under the drag spec, and run the
    three-branch loop.  Returns the final latent, the start index, and the
    warp diagnostics when a drag was applied."""
    predictor = predictor or sampler.LinearToyPredictor(z0.depth_dim)
    schedule = sampler.build_schedule(config.total_steps, config.beta_start, config.beta_end)
    seed = sampler.shared_noise_seed(config.seed)
    z_start, start = sampler.forward_noise(z0, schedule, config.strength, seed)

    diag = None
    mask = None
    if dragspec is not None:
        mask = dragspec.mask
        result = warp_grid(
            z_start, dragspec.mask, depth_for_grid(z0, depth), dragspec.pairs, dragspec.params
        )
        z_start = result.warped
        diag = result.diagnostics

    final = sampler.run_three_branch(
        z0, z_start, prompts, config, predictor,
        mask=mask, max_steps=max_steps, observer=observer,
    )
    return final, start, diag
