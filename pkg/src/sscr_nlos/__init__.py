"""Few-shot non-line-of-sight reconstruction toolkit.

Implements the full measurement model (transient forward operator,
Bernoulli photon counting), the collaborative signal/volume/surface
reconstruction pipeline, classical baselines, and the batch file formats
and CLI around them.
"""

__version__ = "0.1.0"

from ._accel import BACKEND as KERNEL_BACKEND
from .errors import (
    ConfigError,
    DimensionMismatch,
    FormatError,
    GeometryError,
    MembershipError,
    ProbabilityOverflow,
    SingularSystem,
    SscrError,
    ZeroSignal,
)
from .forward import ForwardOperator, adjoint, bin_of, forward
from .geometry import (
    SPEED_OF_LIGHT,
    AlbedoVolume,
    MeasurementGeometry,
    PhotonHistogram,
    SurfaceG,
    TransientSignal,
    VoxelGrid,
    make_plane_scene,
    make_pyramid_scene,
    surface_to_volume,
    volume_to_surface,
)
from .photon import NoiseModel, nll, sample_histogram
from .pipeline import SscrConfig, SscrState, sscr_reconstruct
from .surface_fit import surfaciate

__all__ = [
    "KERNEL_BACKEND",
    "SPEED_OF_LIGHT",
    "__version__",
    "AlbedoVolume",
    "ConfigError",
    "DimensionMismatch",
    "FormatError",
    "ForwardOperator",
    "GeometryError",
    "MeasurementGeometry",
    "MembershipError",
    "NoiseModel",
    "PhotonHistogram",
    "ProbabilityOverflow",
    "SingularSystem",
    "SscrConfig",
    "SscrError",
    "SscrState",
    "SurfaceG",
    "TransientSignal",
    "VoxelGrid",
    "ZeroSignal",
    "adjoint",
    "bin_of",
    "forward",
    "make_plane_scene",
    "make_pyramid_scene",
    "nll",
    "sample_histogram",
    "sscr_reconstruct",
    "surfaciate",
    "surface_to_volume",
    "volume_to_surface",
]
