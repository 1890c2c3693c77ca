"""Depth-coherent region grouping, copy-paste synthesis, and contrastive numerics."""

from .boundary_graph import (
    BoundaryGraph,
    GraphConfig,
    build_graph,
    edge_weight,
    occlusion_distance,
    support_distance,
)
from .community import (
    CommunityResult,
    ConnectivityGraph,
    RegionInfo,
    RegionMap,
    infomap_pass,
    iterative_group,
    map_equation,
    regions_from_communities,
)
from .contrastive import (
    agglomerate,
    combined_loss,
    group_average,
    loss_gradient,
    pca_rgb,
    sinkhorn_codes,
    soft_assign,
    swap_loss,
)
from .errors import DepthgroupError, StaleArtifactError, ValidationError
from .evaluation import bilateral_match_miou, gt_query_miou, matched_metrics, split_connected
from .geometry import (
    CameraIntrinsics,
    DepthFrame,
    NormalMap,
    PointMap,
    compute_normals,
    project,
    unproject,
)
from .sampling import GroupIndex, SampleCoord, pixel_groups, region_groups
from .superpixels import SuperpixelMap, SuperpixelNode, aggregate, slic_segment
from .synthesis import (
    PasteConfig,
    RegionPatch,
    SyntheticSample,
    TransformRecord,
    depthmix_composite,
    extract_regions,
    synthesize,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryGraph",
    "CameraIntrinsics",
    "CommunityResult",
    "ConnectivityGraph",
    "DepthFrame",
    "DepthgroupError",
    "GraphConfig",
    "GroupIndex",
    "NormalMap",
    "PasteConfig",
    "PointMap",
    "RegionInfo",
    "RegionMap",
    "RegionPatch",
    "SampleCoord",
    "StaleArtifactError",
    "SuperpixelMap",
    "SuperpixelNode",
    "SyntheticSample",
    "TransformRecord",
    "ValidationError",
    "agglomerate",
    "aggregate",
    "bilateral_match_miou",
    "build_graph",
    "combined_loss",
    "compute_normals",
    "depthmix_composite",
    "edge_weight",
    "extract_regions",
    "group_average",
    "gt_query_miou",
    "infomap_pass",
    "iterative_group",
    "loss_gradient",
    "map_equation",
    "matched_metrics",
    "occlusion_distance",
    "pca_rgb",
    "pixel_groups",
    "project",
    "region_groups",
    "regions_from_communities",
    "sinkhorn_codes",
    "slic_segment",
    "soft_assign",
    "split_connected",
    "support_distance",
    "swap_loss",
    "synthesize",
    "unproject",
]
