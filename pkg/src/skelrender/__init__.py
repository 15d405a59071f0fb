"""Differentiable rendering of diffuse anisotropic Gaussian skeleton
primitives: pose-to-primitive construction, analytic ray-diffusion
integrals, smooth rasterization, feature-image compositing, gradients, and
a first-order inverse-graphics fitter."""

from . import errors
from .camera import (
    CameraModel,
    Distortion,
    RayGrid,
    distort,
    make_rays,
    orbit_cameras,
    pixel_to_ray_coords,
    project,
    transfer_pose,
    undistort,
)
from .fitting import FitConfig, FitTrace, appearance_reg, fit
from .geometry import erf, erfc, erfcx, log_erfc, mahalanobis_sq, rotation_between
from .gradients import (
    ActiveBlocks,
    GradCheckReport,
    GradientVector,
    ParamVector,
    grad_check,
    render_loss,
    render_loss_grad,
)
from .renderer import (
    FeatureImage,
    RenderConfig,
    RenderDiagnostics,
    background_terms,
    composite_weights,
    optimal_depth,
    raster_coeff,
    ray_density,
    render,
    render_pose,
)
from .sceneio import (
    SceneFile,
    load_scene,
    read_fimg,
    save_scene,
    write_fimg,
    write_preview,
)
from .skeleton import (
    Pose,
    Pose2D,
    PrimitiveSet,
    RelativePose,
    SkeletonGraph,
    assemble_absolute_pose,
    fuse_appearances,
    fuse_poses,
    mpjpe,
    pose_loss,
    primitives_from_pose,
    solve_root_depth,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
