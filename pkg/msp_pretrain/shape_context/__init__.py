from .descriptor import (
    DEFAULT_PARTITIONS,
    DEFAULT_RADIUS,
    DEFAULT_XI,
    NEIGHBOR_SEARCH,
    ScDescriptor,
    ScPartition,
    bin_index,
    bin_indices,
    compute_multiscale_sc,
    compute_shape_context,
    descriptor_length,
    format_partitions,
    parse_partitions,
    write_descriptor_dump,
)

__all__ = [
    "DEFAULT_PARTITIONS",
    "DEFAULT_RADIUS",
    "DEFAULT_XI",
    "NEIGHBOR_SEARCH",
    "ScDescriptor",
    "ScPartition",
    "bin_index",
    "bin_indices",
    "compute_multiscale_sc",
    "compute_shape_context",
    "descriptor_length",
    "format_partitions",
    "parse_partitions",
    "write_descriptor_dump",
]
