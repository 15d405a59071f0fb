"""Skeleton graph and pose containers, pose-to-primitive construction, the
closed-form root-depth solver, pose losses, and multi-view fusion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DegenerateLimb,
    EmptyInput,
    ShapeMismatch,
    ValidationError,
)
from .geometry import EPS_NORM

DEFAULT_LIMB_WIDTH = 0.05
LIMB_AXIS = np.array([1.0, 0.0, 0.0])

_DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class SkeletonGraph:
    """N joints connected by M edges; each edge carries a width in meters."""

    n_joints: int
    edges: tuple
    widths: np.ndarray
    names: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        object.__setattr__(
            self, "widths", np.asarray(self.widths, dtype=float).reshape(-1)
        )
        if self.names is not None:
            object.__setattr__(self, "names", tuple(str(n) for n in self.names))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def validate(self) -> list[str]:
        problems = []
        if self.n_joints < 1:
            problems.append("skeleton needs at least one joint")
        seen = set()
        for idx, (i, j) in enumerate(self.edges):
            if not (0 <= i < self.n_joints and 0 <= j < self.n_joints):
                problems.append(f"edge {idx} = ({i}, {j}) out of joint range")
            if i == j:
                problems.append(f"edge {idx} connects joint {i} to itself")
            key = (min(i, j), max(i, j))
            if key in seen:
                problems.append(f"duplicate edge ({i}, {j})")
            seen.add(key)
        if self.widths.shape != (len(self.edges),):
            problems.append(
                f"widths length {self.widths.shape} does not match {len(self.edges)} edges"
            )
        elif np.any(~np.isfinite(self.widths)) or np.any(self.widths <= 0):
            problems.append("edge widths must be finite and positive")
        if self.names is not None and len(self.names) != self.n_joints:
            problems.append("names length must equal n_joints")
        return problems

    def require_valid(self) -> "SkeletonGraph":
        problems = self.validate()
        if problems:
            raise ValidationError(problems)
        return self


@dataclass(frozen=True)
class Pose:
    """Joint positions in camera coordinates (meters) with confidences."""

    joints: np.ndarray  # (N, 3)
    confidence: np.ndarray | None = None  # (N,)

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "joints", joints)
        conf = self.confidence
        if conf is None:
            conf = np.ones(joints.shape[0])
        object.__setattr__(self, "confidence", np.asarray(conf, dtype=float).reshape(-1))

    @property
    def n_joints(self) -> int:
        return self.joints.shape[0]

    def validate(self) -> list[str]:
        problems = []
        if not np.all(np.isfinite(self.joints)):
            problems.append("pose joints must be finite")
        if self.confidence.shape != (self.n_joints,):
            problems.append("confidence length must equal joint count")
        elif np.any(~np.isfinite(self.confidence)) or np.any(
            (self.confidence < 0) | (self.confidence > 1)
        ):
            problems.append("confidences must lie in [0, 1]")
        return problems


@dataclass(frozen=True)
class RelativePose:
    """Offsets of the non-root joints from the root joint (meters)."""

    joints: np.ndarray  # (N - 1, 3)

    def __post_init__(self):
        object.__setattr__(
            self, "joints", np.asarray(self.joints, dtype=float).reshape(-1, 3)
        )


@dataclass(frozen=True)
class Pose2D:
    """2D joints in undistorted normalized (ray) coordinates, implicit z = 1."""

    points: np.ndarray  # (N, 2)
    confidence: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        conf = self.confidence
        if conf is None:
            conf = np.ones(pts.shape[0])
        object.__setattr__(self, "confidence", np.asarray(conf, dtype=float).reshape(-1))


@dataclass(frozen=True)
class PrimitiveSet:
    """M anisotropic Gaussian primitives stored factored: location mu and
    shape Sigma = R diag(lam) R^T with lam = (limb length, width, width)."""

    mus: np.ndarray  # (M, 3)
    rotations: np.ndarray  # (M, 3, 3)
    lams: np.ndarray  # (M, 3) positive

    def __post_init__(self):
        object.__setattr__(self, "mus", np.asarray(self.mus, dtype=float).reshape(-1, 3))
        object.__setattr__(
            self, "rotations", np.asarray(self.rotations, dtype=float).reshape(-1, 3, 3)
        )
        object.__setattr__(self, "lams", np.asarray(self.lams, dtype=float).reshape(-1, 3))
        if np.any(self.lams <= 0):
            raise ValidationError("primitive shape eigenvalues must be positive")

    @property
    def count(self) -> int:
        return self.mus.shape[0]

    def sigmas(self) -> np.ndarray:
        """Dense shape matrices R diag(lam) R^T, shape (M, 3, 3)."""
        scaled = self.rotations * self.lams[:, None, :]
        return np.einsum("mik,mjk->mij", scaled, self.rotations)

    def transformed(self, R: np.ndarray, t: np.ndarray) -> "PrimitiveSet":
        """Rigidly move every primitive: mu -> R mu + t, Sigma -> R Sigma R^T."""
        R = np.asarray(R, dtype=float)
        t = np.asarray(t, dtype=float)
        return PrimitiveSet(
            mus=self.mus @ R.T + t,
            rotations=np.einsum("ij,mjk->mik", R, self.rotations),
            lams=self.lams.copy(),
        )


@dataclass
class PrimitiveBuildTrace:
    """Intermediates of the pose-to-primitive construction, retained so the
    adjoint pass can run the chain rule through the limb rotations."""

    edge_i: np.ndarray
    edge_j: np.ndarray
    mus: np.ndarray
    rotations: np.ndarray
    lams: np.ndarray
    deltas: np.ndarray  # (M, 3) joint differences
    lengths: np.ndarray  # (M,)
    dhat: np.ndarray  # (M, 3)
    cosang: np.ndarray  # (M,) cosine against the reference limb axis
    sinang: np.ndarray  # (M,)
    v: np.ndarray  # (M, 3) normalized rejection, zero on branch edges
    rej_norm: np.ndarray  # (M,)
    generic: np.ndarray  # (M,) bool, False where a parallel branch was taken


def build_primitives_traced(
    joints: np.ndarray, edge_i: np.ndarray, edge_j: np.ndarray, widths: np.ndarray
) -> PrimitiveBuildTrace:
    """Vectorized primitive construction over all edges at once.

    Reproduces rotation_between(LIMB_AXIS, delta) edge by edge, including its
    parallel/anti-parallel branches, while keeping every intermediate needed
    for gradients.
    """
    joints = np.asarray(joints, dtype=float)
    deltas = joints[edge_j] - joints[edge_i]
    lengths = np.linalg.norm(deltas, axis=1)
    if np.any(lengths <= EPS_NORM):
        bad_idx = np.nonzero(lengths <= EPS_NORM)[0]
        raise DegenerateLimb([(int(edge_i[k]), int(edge_j[k])) for k in bad_idx])
    m = deltas.shape[0]
    dhat = deltas / lengths[:, None]
    c = dhat[:, 0]  # reference axis is e_x, so cos(theta) = dhat . e_x
    par = c >= 1.0 - 1e-12
    anti = c <= -1.0 + 1e-12
    generic = ~(par | anti)

    rotations = np.tile(np.eye(3), (m, 1, 1))
    # 180 degree turn about e_z, the deterministic axis orthogonal to e_x.
    rotations[anti] = np.diag([-1.0, -1.0, 1.0])

    v = np.zeros((m, 3))
    rej_norm = np.ones(m)
    s = np.zeros(m)
    if np.any(generic):
        rej = dhat[generic].copy()
        rej[:, 0] = 0.0
        rn = np.linalg.norm(rej, axis=1)
        vg = rej / rn[:, None]
        cg = c[generic]
        sg = np.sqrt(np.maximum(0.0, 1.0 - cg * cg))
        uu = np.zeros((3, 3))
        uu[0, 0] = 1.0
        vv = np.einsum("ka,kb->kab", vg, vg)
        vu = np.zeros_like(vv)
        vu[:, :, 0] = vg
        uv = np.zeros_like(vv)
        uv[:, 0, :] = vg
        rotations[generic] = (
            np.eye(3)[None, :, :]
            + (cg - 1.0)[:, None, None] * (uu[None, :, :] + vv)
            + sg[:, None, None] * (vu - uv)
        )
        v[generic] = vg
        rej_norm[generic] = rn
        s[generic] = sg

    mus = 0.5 * (joints[edge_i] + joints[edge_j])
    widths = np.asarray(widths, dtype=float).reshape(-1)
    lams = np.stack([lengths, widths, widths], axis=1)
    return PrimitiveBuildTrace(
        edge_i=edge_i,
        edge_j=edge_j,
        mus=mus,
        rotations=rotations,
        lams=lams,
        deltas=deltas,
        lengths=lengths,
        dhat=dhat,
        cosang=c,
        sinang=s,
        v=v,
        rej_norm=rej_norm,
        generic=generic,
    )


def primitives_from_pose(pose: Pose, graph: SkeletonGraph) -> PrimitiveSet:
    """One primitive per skeleton edge: located at the limb midpoint, long
    axis equal to the limb length along the limb direction, the two cross
    axes equal to the edge width."""
    graph.require_valid()
    joints = pose.joints
    if joints.shape[0] != graph.n_joints:
        raise ShapeMismatch(
            f"pose has {joints.shape[0]} joints, skeleton expects {graph.n_joints}"
        )
    edge_i = np.array([i for i, _ in graph.edges], dtype=int)
    edge_j = np.array([j for _, j in graph.edges], dtype=int)
    built = build_primitives_traced(joints, edge_i, edge_j, graph.widths)
    return PrimitiveSet(mus=built.mus, rotations=built.rotations, lams=built.lams)


def assemble_absolute_pose(root: np.ndarray, rel: RelativePose) -> Pose:
    """Absolute pose [root | root + rel]; confidences default to 1."""
    root = np.asarray(root, dtype=float).reshape(3)
    joints = np.vstack([root[None, :], root[None, :] + rel.joints])
    return Pose(joints=joints)


def solve_root_depth(p2d: Pose2D, rel: RelativePose) -> float:
    """Closed-form root depth minimizing the reprojection error between the
    root-relative 3D pose and the 2D pose in ray coordinates.

    Averages a per-joint closed-form term; joints whose denominator is
    degenerate (the 2D point lies along the root ray direction in a way that
    cancels the rejection products) are skipped. Raises
    DegenerateConfiguration when no joint survives.
    """
    n = p2d.points.shape[0]
    if n < 2:
        raise DegenerateConfiguration("need at least one non-root joint")
    if rel.joints.shape[0] != n - 1:
        raise ShapeMismatch(
            f"relative pose has {rel.joints.shape[0]} joints, expected {n - 1}"
        )
    x1, y1 = p2d.points[0]
    xj = p2d.points[1:, 0]
    yj = p2d.points[1:, 1]
    bx = rel.joints[:, 0]
    by = rel.joints[:, 1]
    bz = rel.joints[:, 2]

    numer = bx * bx + by * by + (
        (xj * x1 + yj * y1) * bz - (xj + x1) * bx - (yj + y1) * by
    ) * bz
    denom = (xj - x1) * (bx - x1 * bz) + (yj - y1) * (by - y1 * bz)

    ok = np.abs(denom) >= _DENOM_FLOOR
    if not np.any(ok):
        raise DegenerateConfiguration(
            "all per-joint denominators below 1e-12; depth is unobservable"
        )
    return float(np.mean(numer[ok] / denom[ok]))


def fuse_poses(rel_poses: list[RelativePose], rotations: list[np.ndarray]) -> RelativePose:
    """Average root-relative poses from several views after rotating each
    into the reference view: (1/N) sum_i R_i @ P_i."""
    if len(rel_poses) == 0:
        raise EmptyInput("no poses to fuse")
    if len(rotations) != len(rel_poses):
        raise ShapeMismatch("need one rotation per pose")
    acc = np.zeros_like(rel_poses[0].joints)
    for rel, R in zip(rel_poses, rotations):
        if rel.joints.shape != acc.shape:
            raise ShapeMismatch("fused poses must share the same joint count")
        acc += rel.joints @ np.asarray(R, dtype=float).T
    return RelativePose(joints=acc / len(rel_poses))


def fuse_appearances(apps: list[np.ndarray]) -> np.ndarray:
    """Element-wise mean of per-view appearance matrices."""
    if len(apps) == 0:
        raise EmptyInput("no appearances to fuse")
    first = np.asarray(apps[0], dtype=float)
    acc = np.zeros_like(first)
    for a in apps:
        a = np.asarray(a, dtype=float)
        if a.shape != first.shape:
            raise ShapeMismatch("fused appearances must share the same shape")
        acc += a
    return acc / len(apps)


def pose_loss(pred: RelativePose, truth: RelativePose, conf=None) -> float:
    """Confidence-weighted mean squared joint error between relative poses."""
    if pred.joints.shape != truth.joints.shape:
        raise ShapeMismatch("pose_loss requires matching joint counts")
    n = pred.joints.shape[0]
    if conf is None:
        conf = np.ones(n)
    conf = np.asarray(conf, dtype=float).reshape(-1)
    if conf.shape != (n,):
        raise ShapeMismatch("pose_loss confidence length must match joint count")
    sq = np.sum((truth.joints - pred.joints) ** 2, axis=1)
    return float(np.mean(conf * sq))


def mpjpe(pred: Pose, truth: Pose) -> float:
    """Mean per-joint Euclidean position error in meters."""
    if pred.joints.shape != truth.joints.shape:
        raise ShapeMismatch("mpjpe requires matching joint counts")
    return float(np.mean(np.linalg.norm(pred.joints - truth.joints, axis=1)))
