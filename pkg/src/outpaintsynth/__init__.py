"""Self-annotating synthetic detection datasets by outpainting cropped objects."""

from .compose import CanvasBundle, CanvasComposer, PlacementSpec
from .dataset import SeedStratifiedSplitter, SplitConfig, stratified_split
from .geometry import CLASS_NAMES, CLASS_REGISTRY, BufferSpec, NormAnnotation, PixelBox, iou
from .metrics import DetectionSample, MetricsReport, compute_map, evaluate
from .orchestrate import AttemptPolicy, generate_background, generate_until_pass, run_pipeline
from .quality import QualityGate, QualityReport, QualityThresholds, tv_loss
from .seeds import ConsensusDetectorSelector, SeedRecord, extract_seed

__version__ = "0.1.0"

__all__ = [
    "AttemptPolicy",
    "BufferSpec",
    "CLASS_NAMES",
    "CLASS_REGISTRY",
    "CanvasBundle",
    "CanvasComposer",
    "ConsensusDetectorSelector",
    "DetectionSample",
    "MetricsReport",
    "NormAnnotation",
    "PixelBox",
    "PlacementSpec",
    "QualityGate",
    "QualityReport",
    "QualityThresholds",
    "SeedRecord",
    "SeedStratifiedSplitter",
    "SplitConfig",
    "compute_map",
    "evaluate",
    "extract_seed",
    "generate_background",
    "generate_until_pass",
    "iou",
    "run_pipeline",
    "stratified_split",
    "tv_loss",
]
