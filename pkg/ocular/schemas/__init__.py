# Schemas module
from .box import (
    RegionClass,
    CLASS_NAMES,
    Box,
    Annotation,
    Detection
)
from .network import (
    Profile,
    LayerKind,
    LayerGroup,
    LayerSpec,
    NetworkConfig,
    DEFAULT_ANCHORS
)
from .training import TrainConfig
from .dataset import (
    Split,
    ManifestEntry,
    DatasetManifest
)
from .report import (
    ImageIoU,
    ClassMetrics,
    EvalReport,
    WilcoxonResult,
    ClassComparison,
    CompareReport
)

__all__ = [
    # Box schemas
    "RegionClass",
    "CLASS_NAMES",
    "Box",
    "Annotation",
    "Detection",

    # Network schemas
    "Profile",
    "LayerKind",
    "LayerGroup",
    "LayerSpec",
    "NetworkConfig",
    "DEFAULT_ANCHORS",

    # Training schemas
    "TrainConfig",

    # Dataset schemas
    "Split",
    "ManifestEntry",
    "DatasetManifest",

    # Report schemas
    "ImageIoU",
    "ClassMetrics",
    "EvalReport",
    "WilcoxonResult",
    "ClassComparison",
    "CompareReport"
]
