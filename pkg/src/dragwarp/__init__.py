"""dragwarp: depth-aware drag warping of feature grids with a three-branch
guided denoising loop, plus a CLI and HTTP service around them."""

from .errors import DragwarpError
from .grid import (
    DepthMap,
    DragPair,
    DragSpec,
    FeatureGrid,
    Mask,
    PcddParams,
    image_to_grid,
    grid_to_image,
    luminance_depth,
    read_fgrid,
    write_fgrid,
    validate_grid,
)
from .pipeline import WarpResult, sample_grid, warp_grid
from .sampler import EtaSchedule, SamplerConfig, build_schedule, eta_at, run_three_branch

__version__ = "0.1.0"

__all__ = [
    "DepthMap",
    "DragPair",
    "DragSpec",
    "DragwarpError",
    "EtaSchedule",
    "FeatureGrid",
    "Mask",
    "PcddParams",
    "SamplerConfig",
    "WarpResult",
    "build_schedule",
    "eta_at",
    "grid_to_image",
    "image_to_grid",
    "luminance_depth",
    "read_fgrid",
    "run_three_branch",
    "sample_grid",
    "validate_grid",
    "warp_grid",
    "write_fgrid",
    "__version__",
]
