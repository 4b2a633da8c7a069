"""Box-conditioned transformer image-to-image translation (C++ core)."""

from ._core import (
    CheckpointError,
    ShapeError,
    Translator,
    adain,
    gamma,
    gen_scene,
    grad_check,
    info_nce,
    instance_ssim,
    palette_distance,
    pos_embed_global,
    roi_align,
    run_cli,
    shape_walk,
    ssim,
    total_loss,
)

__all__ = [
    "CheckpointError",
    "ShapeError",
    "Translator",
    "adain",
    "gamma",
    "gen_scene",
    "grad_check",
    "info_nce",
    "instance_ssim",
    "palette_distance",
    "pos_embed_global",
    "roi_align",
    "run_cli",
    "shape_walk",
    "ssim",
    "total_loss",
]
