from .blocks import (
    BlockGrid,
    MaskResult,
    MaskSpec,
    apply_mask,
    block_indices,
    build_block_grid,
    mask_from_blocks,
    select_masked_blocks,
)

__all__ = [
    "BlockGrid",
    "MaskResult",
    "MaskSpec",
    "apply_mask",
    "block_indices",
    "build_block_grid",
    "mask_from_blocks",
    "select_masked_blocks",
]
