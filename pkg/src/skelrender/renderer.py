"""Differentiable rendering of diffuse anisotropic Gaussian primitives.

Each primitive (mu, Sigma) diffuses density onto a camera ray r as the line
integral of a Gaussian,

    F = integral_0^inf exp(-Delta^2(z r, mu, alpha Sigma)) dz,

which has the closed form

    F = sqrt(alpha pi) / (2 sqrt(rSr)) * erfc(-rSm / (sqrt(alpha) sqrt(rSr)))
        * exp(-(mSm - rSm^2 / rSr) / alpha),

with rSr = r^T Sigma^{-1} r, rSm = r^T Sigma^{-1} mu, mSm = mu^T Sigma^{-1} mu.
The erfc argument carries a minus sign so that primitives in front of the
camera accumulate their full Gaussian line mass; adaptive quadrature of the
integral is the ground truth pinning that sign.

Occlusion is soft: each primitive also gets a rasterization coefficient
lambda = 1 / (1 + z*^4) from its optimal ray depth z* = rSm / rSr, and the
per-pixel weights are the normalized lambda*F products over all primitives
plus a background pseudo-primitive. Products are formed in log space and
normalized by max subtraction, since realistic shape scales push exponents
far past the double range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraModel, make_rays
from .errors import (
    AllZeroDensities,
    EmptyInput,
    NoConvergence,
    NonUnitRay,
    ShapeMismatch,
    ValidationError,
)
from .geometry import SQRT_PI, log_erfc, require_spd
from .skeleton import Pose, PrimitiveSet, SkeletonGraph, primitives_from_pose

RAY_UNIT_TOL = 1e-10


@dataclass(frozen=True)
class RenderConfig:
    """Rendering knobs: shape-magnitude scale alpha, background blending
    beta, background appearance, output size, and the floor applied to the
    background depth when every primitive sits behind the camera."""

    alpha: float = 2.5e-2
    beta: float = 2.0
    background: np.ndarray = field(default_factory=lambda: np.zeros(16))
    width: int = 256
    height: int = 256
    background_min_depth: float = 1.0

    def __post_init__(self):
        object.__setattr__(
            self, "background", np.asarray(self.background, dtype=float).reshape(-1)
        )

    @property
    def channels(self) -> int:
        return self.background.shape[0]

    def validate(self) -> list[str]:
        problems = []
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            problems.append("alpha must be positive")
        if not (np.isfinite(self.beta) and self.beta > 1):
            problems.append("beta must exceed 1")
        if not np.all(np.isfinite(self.background)):
            problems.append("background appearance must be finite")
        if self.width <= 0 or self.height <= 0:
            problems.append("render dimensions must be positive")
        if not (np.isfinite(self.background_min_depth) and self.background_min_depth > 0):
            problems.append("background_min_depth must be positive")
        return problems

    def require_valid(self) -> "RenderConfig":
        problems = self.validate()
        if problems:
            raise ValidationError(problems)
        return self


@dataclass(frozen=True)
class FeatureImage:
    """H x W grid of A-dimensional appearance vectors."""

    data: np.ndarray  # (H, W, A)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeMismatch(f"feature image must be H x W x A, got {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class RenderDiagnostics:
    """Per-pixel per-primitive intermediates retained for testing and
    gradient checks. ``omega`` includes the background as its last column."""

    density: np.ndarray  # (H, W, M) linear-space F, may underflow to 0
    raster: np.ndarray  # (H, W, M)
    z_star: np.ndarray  # (H, W, M)
    omega: np.ndarray  # (H, W, M + 1)
    density_bg: float
    raster_bg: float
    z_bg: float


def _quadratic_forms(r, mu, sigma):
    r = np.asarray(r, dtype=float).reshape(3)
    if abs(np.linalg.norm(r) - 1.0) > RAY_UNIT_TOL:
        raise NonUnitRay(f"ray norm {np.linalg.norm(r)} is not 1 within {RAY_UNIT_TOL}")
    sigma = require_spd(sigma)
    mu = np.asarray(mu, dtype=float).reshape(3)
    sol = np.linalg.solve(sigma, np.stack([r, mu], axis=1))
    rSr = float(r @ sol[:, 0])
    rSm = float(r @ sol[:, 1])
    mSm = float(mu @ sol[:, 1])
    return rSr, rSm, mSm


def ray_density(r, mu, sigma, alpha: float) -> float:
    """Closed-form Gaussian line integral F of a primitive along a unit ray."""
    if not (np.isfinite(alpha) and alpha > 0):
        raise ValidationError("alpha must be positive")
    rSr, rSm, mSm = _quadratic_forms(r, mu, sigma)
    return float(np.exp(log_ray_density_terms(rSr, rSm, mSm, alpha)))


def log_ray_density_terms(rSr, rSm, mSm, alpha):
    """log F from the three quadratic forms; stable where F underflows."""
    u = -rSm / (np.sqrt(alpha) * np.sqrt(rSr))
    resid = mSm - rSm * rSm / rSr
    return (
        np.log(np.sqrt(alpha) * SQRT_PI / 2.0)
        - 0.5 * np.log(rSr)
        + log_erfc(u)
        - resid / alpha
    )


def optimal_depth(r, mu, sigma) -> float:
    """Ray depth z* = rSm / rSr minimizing the Mahalanobis distance to the
    primitive; independent of the alpha scale."""
    rSr, rSm, _ = _quadratic_forms(r, mu, sigma)
    return rSm / rSr


def raster_coeff(z_star):
    """Smooth rasterization coefficient 1 / (1 + z*^4)."""
    z = np.asarray(z_star, dtype=float)
    out = 1.0 / (1.0 + z**4)
    return float(out) if out.ndim == 0 else out


def background_terms(z_stars, cfg: RenderConfig):
    """Density, rasterization coefficient, and depth of the background
    pseudo-primitive, shared by all pixels.

    The background sits at beta times the furthest optimal depth (floored at
    cfg.background_min_depth) with shape alpha * I, giving
    F_bg = sqrt(alpha pi)/2 * erfc(z_bg / sqrt(alpha)); for realistic alpha
    this underflows to 0 in linear space, so the renderer works with its log.
    """
    z_stars = np.asarray(z_stars, dtype=float)
    if z_stars.size == 0:
        raise EmptyInput("background_terms needs at least one primitive depth")
    cfg.require_valid()
    z_bg = max(cfg.beta * float(np.max(z_stars)), cfg.background_min_depth)
    log_f_bg = _log_background_density(z_bg, cfg.alpha)
    return float(np.exp(log_f_bg)), float(raster_coeff(z_bg)), z_bg


def _log_background_density(z_bg, alpha):
    return np.log(np.sqrt(alpha) * SQRT_PI / 2.0) + log_erfc(z_bg / np.sqrt(alpha))


def composite_weights(F, lam) -> np.ndarray:
    """Normalize lambda * F products (background included in the last slot)
    into convex per-pixel weights. Linear-space variant; the renderer itself
    normalizes in log space."""
    F = np.asarray(F, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if F.shape != lam.shape:
        raise ShapeMismatch("F and lambda must share a shape")
    prod = lam * F
    total = np.sum(prod, axis=-1)
    if np.any(total <= 0) or not np.all(np.isfinite(total)):
        bad = np.argwhere((total <= 0) | ~np.isfinite(total))
        raise AllZeroDensities(tuple(bad[0]))
    return prod / total[..., None]


def forward_core(mus, rotations, lams, rays_flat, appearances, background, cfg):
    """Vectorized forward pass over P rays and M primitives.

    Returns every intermediate needed by the adjoint pass. All reductions are
    fixed-order numpy loops, so the output is deterministic regardless of
    thread environment.
    """
    alpha = cfg.alpha
    sa = np.sqrt(alpha)
    P = rays_flat.shape[0]
    M = mus.shape[0]
    A = background.shape[0]

    if M == 0:
        omega = np.ones((P, 1))
        img = np.broadcast_to(background, (P, A)).copy()
        return {
            "M": 0,
            "omega": omega,
            "image": img,
            "z_bg": cfg.background_min_depth,
            "log_f_bg": float(_log_background_density(cfg.background_min_depth, alpha)),
            "bg_clamped": True,
        }

    inv_lam = 1.0 / lams  # (M, 3)
    # Components of r and mu in each primitive's eigenbasis.
    rt = np.einsum("mbi,pb->pmi", rotations, rays_flat)  # (P, M, 3)
    mut = np.einsum("mbi,mb->mi", rotations, mus)  # (M, 3)
    rSr = np.einsum("pmi,mi->pm", rt * rt, inv_lam)
    rSm = np.einsum("pmi,mi->pm", rt, mut * inv_lam)
    mSm = np.einsum("mi,mi->m", mut * mut, inv_lam)

    z_star = rSm / rSr
    resid = mSm[None, :] - rSm * rSm / rSr
    u = -rSm / (sa * np.sqrt(rSr))
    log_f = (
        np.log(sa * SQRT_PI / 2.0) - 0.5 * np.log(rSr) + log_erfc(u) - resid / alpha
    )
    z4 = z_star**4
    log_lam = -np.log1p(z4)
    logits = log_f + log_lam  # (P, M)

    argmax_flat = int(np.argmax(z_star))
    z_max = float(z_star.reshape(-1)[argmax_flat])
    bg_clamped = cfg.beta * z_max < cfg.background_min_depth
    z_bg = max(cfg.beta * z_max, cfg.background_min_depth)
    log_f_bg = float(_log_background_density(z_bg, alpha))
    logit_bg = log_f_bg - np.log1p(z_bg**4)
    if not np.isfinite(logit_bg):
        raise AllZeroDensities((0, 0))

    full = np.concatenate([logits, np.full((P, 1), logit_bg)], axis=1)
    mx = np.max(full, axis=1)
    w = np.exp(full - mx[:, None])
    omega = w / np.sum(w, axis=1)[:, None]

    img = np.einsum("pm,mc->pc", omega[:, :M], appearances)
    img += omega[:, M:] * background[None, :]

    return {
        "M": M,
        "inv_lam": inv_lam,
        "rt": rt,
        "mut": mut,
        "rSr": rSr,
        "rSm": rSm,
        "mSm": mSm,
        "z_star": z_star,
        "u": u,
        "log_f": log_f,
        "z4": z4,
        "logits": logits,
        "argmax_flat": argmax_flat,
        "z_bg": z_bg,
        "bg_clamped": bg_clamped,
        "log_f_bg": log_f_bg,
        "logit_bg": logit_bg,
        "omega": omega,
        "image": img,
    }


def render(
    prims: PrimitiveSet,
    appearances: np.ndarray,
    cam: CameraModel,
    cfg: RenderConfig,
    diagnostics: bool = False,
):
    """Composite primitives (given in the camera frame) into a feature image.

    Every pixel is the convex combination of the primitive appearances and
    the background appearance, weighted by the normalized lambda * F
    products. Deterministic: identical inputs give bit-identical output.
    """
    cfg.require_valid()
    cam.require_valid()
    if cam.width != cfg.width or cam.height != cfg.height:
        raise ShapeMismatch(
            f"camera size {cam.width}x{cam.height} differs from render config "
            f"{cfg.width}x{cfg.height}"
        )
    appearances = np.asarray(appearances, dtype=float)
    if appearances.ndim != 2 or appearances.shape[0] != prims.count:
        raise ShapeMismatch(
            f"appearances shape {appearances.shape} does not match {prims.count} primitives"
        )
    if appearances.shape[1] != cfg.channels:
        raise ShapeMismatch(
            f"appearance dimension {appearances.shape[1]} differs from background "
            f"dimension {cfg.channels}"
        )

    grid = make_rays(cam)
    if not np.all(grid.valid):
        bad = np.argwhere(~grid.valid)
        raise NoConvergence(
            f"ray undistortion failed at pixel {tuple(bad[0])} "
            f"({bad.shape[0]} pixel(s) total)"
        )
    rays_flat = grid.directions.reshape(-1, 3)

    core = forward_core(
        prims.mus, prims.rotations, prims.lams, rays_flat, appearances, cfg.background, cfg
    )
    h, w = cam.height, cam.width
    image = FeatureImage(core["image"].reshape(h, w, cfg.channels))
    if not diagnostics:
        return image, None

    m = prims.count
    if m == 0:
        diag = RenderDiagnostics(
            density=np.zeros((h, w, 0)),
            raster=np.zeros((h, w, 0)),
            z_star=np.zeros((h, w, 0)),
            omega=core["omega"].reshape(h, w, 1),
            density_bg=float(np.exp(core["log_f_bg"])),
            raster_bg=float(raster_coeff(core["z_bg"])),
            z_bg=core["z_bg"],
        )
        return image, diag

    diag = RenderDiagnostics(
        density=np.exp(core["log_f"]).reshape(h, w, m),
        raster=(1.0 / (1.0 + core["z4"])).reshape(h, w, m),
        z_star=core["z_star"].reshape(h, w, m),
        omega=core["omega"].reshape(h, w, m + 1),
        density_bg=float(np.exp(core["log_f_bg"])),
        raster_bg=float(raster_coeff(core["z_bg"])),
        z_bg=core["z_bg"],
    )
    return image, diag


def render_pose(
    joints: np.ndarray,
    graph: SkeletonGraph,
    appearances: np.ndarray,
    cam: CameraModel,
    cfg: RenderConfig,
    diagnostics: bool = False,
):
    """Full pipeline: map joints through the camera extrinsics, build one
    primitive per skeleton edge, and render."""
    cam_joints = np.asarray(joints, dtype=float) @ cam.R.T + cam.t
    prims = primitives_from_pose(Pose(joints=cam_joints), graph)
    return render(prims, appearances, cam, cfg, diagnostics=diagnostics)
