"""Point-cloud organ segmentation for plants via 2D embeddings.

The pipeline flattens a 3D plant scan into a 2D map with an exact t-SNE,
cuts the map into superpoints, classifies each superpoint as Leaf or Stem
with a small linear SVM over covariance shape features, and finally splits
the leaf points into individual leaf instances with a second embedding.
"""

from .core import (
    CLASS_NAMES,
    DEFAULT_CLASS_MAP,
    LEAF,
    STEM,
    PointCloud,
    VoxelParams,
    knn_1,
    nearest_indices,
    propagate_labels,
    read_cloud,
    voxel_downsample,
    write_cloud,
)
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    FormatError,
    GenerationError,
    InputError,
    NumericalError,
    PlantSneError,
    TrainingError,
)
from .tsne import AffinityMatrix, Embedding, TsneConfig, affinities, embed
from .cluster import ClusterParams, euclidean_cluster, solidity, spectral_k
from .superpoint import SuperpointSet, extract_superpoints, lift_superpoints
from .segment import (
    InstanceParams,
    SvmModel,
    classify,
    fit_svm,
    instance_segment,
    load_model,
    point_features,
    save_model,
    superpoint_features,
    train_svm,
)
from .metrics import SemanticReport, best_dice, iou, sbd, semantic_report
from .synth import PlantSpec, generate
from .config import PipelineConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "DEFAULT_CLASS_MAP",
    "LEAF",
    "STEM",
    "PointCloud",
    "VoxelParams",
    "knn_1",
    "nearest_indices",
    "propagate_labels",
    "read_cloud",
    "voxel_downsample",
    "write_cloud",
    "ConfigError",
    "DegenerateGeometryError",
    "FormatError",
    "GenerationError",
    "InputError",
    "NumericalError",
    "PlantSneError",
    "TrainingError",
    "AffinityMatrix",
    "Embedding",
    "TsneConfig",
    "affinities",
    "embed",
    "ClusterParams",
    "euclidean_cluster",
    "solidity",
    "spectral_k",
    "SuperpointSet",
    "extract_superpoints",
    "lift_superpoints",
    "InstanceParams",
    "SvmModel",
    "classify",
    "fit_svm",
    "instance_segment",
    "load_model",
    "point_features",
    "save_model",
    "superpoint_features",
    "train_svm",
    "SemanticReport",
    "best_dice",
    "iou",
    "sbd",
    "semantic_report",
    "PlantSpec",
    "generate",
    "PipelineConfig",
    "load_config",
    "__version__",
]
