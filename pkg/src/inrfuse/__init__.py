"""Infrared/visible image fusion by fitting a sine-activated coordinate network per image pair."""

__version__ = "0.1.0"

from .errors import ConfigError, FormatError, InrFuseError, NumericError, ShapeError, UsageError
from .fusion import (
    FusionConfig,
    FusionResult,
    LossBreakdown,
    compute_loss,
    fit_image,
    fuse,
    fuse_multires,
    render,
    superres_query,
)
from .imaging import (
    CoordGrid,
    GradientField,
    GrayImage,
    bilinear_resample,
    denormalize,
    load_image,
    make_coord_grid,
    normalize,
    save_image,
    spatial_gradient,
    spatial_gradient_adjoint,
)
from .metrics import MetricsReport, evaluate
from .siren import GradientSet, SirenConfig, SirenNetwork, siren_init
