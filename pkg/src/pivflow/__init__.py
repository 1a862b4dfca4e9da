"""Dense optical-flow velocimetry: pyramidal Lucas-Kanade with
cross-correlation and Horn-Schunck baselines, a synthetic scene
generator, angular-error metrics, and batch file/plot tooling."""

from ._kernels import BACKEND as compute_backend
from .baselines import (
    CCParams,
    CorrelationSurface,
    HSParams,
    cc_dense_flow,
    horn_schunck,
    hs_energy,
    ncc_displacement,
)
from .errors import (
    ConfigError,
    DimensionError,
    EmptyMaskError,
    FlowFormatError,
    IllConditionedTensorError,
    PivflowError,
    SequenceError,
    WindowOutOfBoundsError,
    ZeroVarianceError,
)
from .flow import FlowField
from .flowio import read_flow, read_sequence, write_flow, write_frames, write_report
from .image_core import (
    GradientField,
    ImageFrame,
    Pyramid,
    build_pyramid,
    downsample,
    gradient,
    sample_bilinear,
)
from .lk import (
    DenseFlowStats,
    IterationTrace,
    LevelTrace,
    LKParams,
    StructureTensor,
    dense_flow,
    lk_refine,
    structure_tensor,
    track_point,
)
from .metrics import (
    AngularErrorField,
    BenchmarkRow,
    MetricsReport,
    angular_error,
    benchmark,
    endpoint_error,
    summarize,
)
from .plots import render_plot
from .synth import (
    FlowModel,
    GroundTruth,
    PRESET_NAMES,
    SceneSpec,
    density_to_saturation,
    generate_sequence,
    preset,
)

__version__ = "0.1.0"

__all__ = [
    "AngularErrorField",
    "BenchmarkRow",
    "CCParams",
    "ConfigError",
    "CorrelationSurface",
    "DenseFlowStats",
    "DimensionError",
    "EmptyMaskError",
    "FlowField",
    "FlowFormatError",
    "FlowModel",
    "GradientField",
    "GroundTruth",
    "HSParams",
    "IllConditionedTensorError",
    "ImageFrame",
    "IterationTrace",
    "LevelTrace",
    "LKParams",
    "MetricsReport",
    "PivflowError",
    "PRESET_NAMES",
    "Pyramid",
    "SceneSpec",
    "SequenceError",
    "StructureTensor",
    "WindowOutOfBoundsError",
    "ZeroVarianceError",
    "angular_error",
    "benchmark",
    "build_pyramid",
    "cc_dense_flow",
    "compute_backend",
    "dense_flow",
    "density_to_saturation",
    "downsample",
    "endpoint_error",
    "generate_sequence",
    "gradient",
    "horn_schunck",
    "hs_energy",
    "lk_refine",
    "ncc_displacement",
    "preset",
    "read_flow",
    "read_sequence",
    "render_plot",
    "sample_bilinear",
    "structure_tensor",
    "summarize",
    "track_point",
    "write_flow",
    "write_frames",
    "write_report",
]
