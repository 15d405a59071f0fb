"""Pinhole camera with radial/tangential lens distortion.

Pixel convention: the stored ray for row i, column j is built from the
homogeneous image point (j + 0.5, i + 0.5, 1), i.e. pixel centers, column
first. ``project`` returns continuous pixel coordinates in the same
convention, so projecting a point on ray (i, j) lands at (j + 0.5, i + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BehindCamera, NoConvergence, ValidationError
from .geometry import is_rotation

EPS_DEPTH = 1e-6

UNDISTORT_ITERS = 20
UNDISTORT_TOL = 1e-9


@dataclass(frozen=True)
class Distortion:
    """Radial (k1, k2, k3) and tangential (p1, p2) lens coefficients."""

    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.p1, self.p2, self.k3], dtype=float)

    @staticmethod
    def from_array(d) -> "Distortion":
        d = np.asarray(d, dtype=float).reshape(-1)
        if d.size != 5:
            raise ValidationError(f"distortion expects 5 coefficients, got {d.size}")
        return Distortion(*[float(v) for v in d])

    def is_zero(self) -> bool:
        return not np.any(self.as_array())


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics K, distortion, extrinsics (R, t) mapping source/world
    coordinates into this camera's frame, and the image size in pixels."""

    K: np.ndarray
    dist: Distortion = field(default_factory=Distortion)
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 256
    height: int = 256

    def __post_init__(self):
        object.__setattr__(self, "K", np.asarray(self.K, dtype=float).reshape(3, 3))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    def validate(self) -> list[str]:
        problems = []
        if not np.all(np.isfinite(self.K)) or abs(np.linalg.det(self.K)) < 1e-12:
            problems.append("camera K must be finite and invertible")
        if not is_rotation(self.R, tol=1e-9):
            problems.append("camera R must be a rotation within 1e-9")
        if not np.all(np.isfinite(self.t)):
            problems.append("camera t must be finite")
        if self.width <= 0 or self.height <= 0:
            problems.append("camera dimensions must be positive")
        if not np.all(np.isfinite(self.dist.as_array())):
            problems.append("distortion coefficients must be finite")
        return problems

    def require_valid(self) -> "CameraModel":
        problems = self.validate()
        if problems:
            raise ValidationError(problems)
        return self

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Apply the extrinsics to (..., 3) points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.R.T + self.t


@dataclass(frozen=True)
class RayGrid:
    """Per-pixel unit ray directions from the pinhole, plus a validity mask
    for pixels whose undistortion failed to converge."""

    directions: np.ndarray  # (H, W, 3)
    valid: np.ndarray  # (H, W) bool

    @property
    def shape(self):
        return self.directions.shape[:2]


def distort(p_norm: np.ndarray, dist: Distortion) -> np.ndarray:
    """Forward lens model on normalized coordinates (..., 2):

    x_d = x (1 + k1 r^2 + k2 r^4 + k3 r^6) + 2 p1 x y + p2 (r^2 + 2 x^2)
    and symmetrically in y, with r^2 = x^2 + y^2.
    """
    p = np.asarray(p_norm, dtype=float)
    x, y = p[..., 0], p[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (dist.k1 + r2 * (dist.k2 + r2 * dist.k3))
    xd = x * radial + 2.0 * dist.p1 * x * y + dist.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + dist.p1 * (r2 + 2.0 * y * y) + 2.0 * dist.p2 * x * y
    return np.stack([xd, yd], axis=-1)


def _radial_tangential(q: np.ndarray, dist: Distortion):
    x, y = q[..., 0], q[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (dist.k1 + r2 * (dist.k2 + r2 * dist.k3))
    tx = 2.0 * dist.p1 * x * y + dist.p2 * (r2 + 2.0 * x * x)
    ty = dist.p1 * (r2 + 2.0 * y * y) + 2.0 * dist.p2 * x * y
    return radial, np.stack([tx, ty], axis=-1)


def undistort(
    p_norm: np.ndarray,
    dist: Distortion,
    iters: int = UNDISTORT_ITERS,
    tol: float = UNDISTORT_TOL,
) -> np.ndarray:
    """Invert ``distort`` by fixed-point iteration q <- (p - tangential(q)) / radial(q).

    Raises NoConvergence if the forward residual still exceeds ``tol`` in the
    max norm after ``iters`` steps.
    """
    q, ok = undistort_masked(p_norm, dist, iters=iters, tol=tol)
    if not np.all(ok):
        bad = np.argwhere(~ok)
        raise NoConvergence(
            f"undistortion did not reach tol={tol} in {iters} iterations "
            f"for {bad.shape[0]} point(s), first at index {tuple(bad[0])}"
        )
    return q


def undistort_masked(
    p_norm: np.ndarray,
    dist: Distortion,
    iters: int = UNDISTORT_ITERS,
    tol: float = UNDISTORT_TOL,
):
    """Like ``undistort`` but returns (points, converged_mask) instead of raising."""
    p = np.asarray(p_norm, dtype=float)
    if dist.is_zero():
        return p.copy(), np.ones(p.shape[:-1], dtype=bool)
    q = p.copy()
    for _ in range(iters):
        radial, tang = _radial_tangential(q, dist)
        q = (p - tang) / radial[..., None]
    resid = np.max(np.abs(distort(q, dist) - p), axis=-1)
    return q, resid <= tol


def make_rays(cam: CameraModel) -> RayGrid:
    """Unit, undistorted pixel-center rays for every pixel of the camera."""
    cam.require_valid()
    h, w = cam.height, cam.width
    jj, ii = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    pix = np.stack([jj + 0.5, ii + 0.5, np.ones_like(jj)], axis=-1)
    kinv = np.linalg.inv(cam.K)
    norm_pts = pix @ kinv.T
    norm_xy = norm_pts[..., :2] / norm_pts[..., 2:3]
    und, ok = undistort_masked(norm_xy, cam.dist)
    dirs = np.concatenate([und, np.ones(und.shape[:-1] + (1,))], axis=-1)
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return RayGrid(directions=dirs, valid=ok)


def project(P: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Project camera-frame points (..., 3) with Z > 0 to continuous pixel
    coordinates (column, row); the exact inverse of the ray construction."""
    pts = np.asarray(P, dtype=float)
    z = pts[..., 2]
    if np.any(z <= EPS_DEPTH):
        raise BehindCamera(f"point depth {float(np.min(z))} <= {EPS_DEPTH}")
    norm_xy = pts[..., :2] / z[..., None]
    d = distort(norm_xy, cam.dist)
    ones = np.ones(d.shape[:-1] + (1,))
    homog = np.concatenate([d, ones], axis=-1) @ cam.K.T
    return homog[..., :2] / homog[..., 2:3]


def pixel_to_ray_coords(pix: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Map continuous pixel coordinates (..., 2) to undistorted normalized
    (ray) coordinates, i.e. (X/Z, Y/Z) for the point along that pixel's ray."""
    p = np.asarray(pix, dtype=float)
    ones = np.ones(p.shape[:-1] + (1,))
    homog = np.concatenate([p, ones], axis=-1) @ np.linalg.inv(cam.K).T
    norm_xy = homog[..., :2] / homog[..., 2:3]
    return undistort(norm_xy, cam.dist)


def transfer_pose(joints: np.ndarray, R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Rigidly map (..., 3) joint positions into another view: R @ P + t."""
    pts = np.asarray(joints, dtype=float)
    return pts @ np.asarray(R, dtype=float).T + np.asarray(t, dtype=float)


def look_at(position: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Extrinsics (R, t) for a camera at ``position`` looking at ``target``.

    The image is kept upright for a y-down world (up = world -y); if the view
    direction is parallel to the y axis, world +x serves as the up vector.
    """
    position = np.asarray(position, dtype=float)
    target = np.asarray(target, dtype=float)
    forward = target - position
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise ValidationError("look_at position coincides with target")
    z_c = forward / n
    down = np.array([0.0, 1.0, 0.0])
    x_c = np.cross(down, z_c)
    if np.linalg.norm(x_c) < 1e-9:
        # Camera looks straight along y; use world +x as the up direction.
        x_c = np.cross(np.array([-1.0, 0.0, 0.0]), z_c)
    x_c /= np.linalg.norm(x_c)
    y_c = np.cross(z_c, x_c)
    R = np.stack([x_c, y_c, z_c], axis=0)
    t = -R @ position
    return R, t


def orbit_cameras(
    center: np.ndarray,
    radius: float,
    elevation: float,
    n_frames: int,
    template: CameraModel,
) -> list[CameraModel]:
    """Cameras evenly spaced in azimuth on a sphere about ``center``, all
    looking at it, with intrinsics/distortion/size copied from ``template``."""
    if radius <= 0:
        raise ValidationError("orbit radius must be positive")
    if n_frames < 1:
        raise ValidationError("orbit needs at least one frame")
    center = np.asarray(center, dtype=float)
    cams = []
    for k in range(n_frames):
        a = 2.0 * np.pi * k / n_frames
        offset = radius * np.array(
            [np.cos(elevation) * np.sin(a), -np.sin(elevation), np.cos(elevation) * np.cos(a)]
        )
        R, t = look_at(center + offset, center)
        cams.append(replace(template, R=R, t=t))
    return cams
