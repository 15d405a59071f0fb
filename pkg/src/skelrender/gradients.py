"""Gradients of scalar losses on rendered feature images with respect to
joint positions, limb widths, appearances, and the background appearance.

The backward pass is a hand-written adjoint of the forward chain
(compositing -> weights -> density/rasterization -> primitive construction),
stabilized the same way as the forward pass: erfc terms are differentiated
through their scaled form so no path exponentiates out of range. Width
gradients are reported in the unconstrained coordinate u with
width = softplus(u), so descent steps can never drive a width non-positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .camera import CameraModel, make_rays
from .errors import NoConvergence, NonFiniteGradient, ShapeMismatch, ValidationError
from .geometry import SQRT_PI, dlog_erfc
from .renderer import FeatureImage, RenderConfig, forward_core
from .skeleton import SkeletonGraph, build_primitives_traced

LOSS_KINDS = ("l1", "l2")

BLOCK_NAMES = ("joints", "widths", "appearances", "background")


def softplus(u):
    """log(1 + e^u), overflow-safe."""
    u = np.asarray(u, dtype=float)
    out = np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))
    return float(out) if out.ndim == 0 else out


def inv_softplus(w):
    """Inverse of softplus on w > 0."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValidationError("softplus inverse requires positive widths")
    small = w < 1e-8
    out = np.where(small, np.log(np.expm1(np.maximum(w, 1e-300))), w + np.log1p(-np.exp(-w)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ActiveBlocks:
    """Which parameter blocks receive gradients and optimizer steps."""

    joints: bool = True
    widths: bool = False
    appearances: bool = True
    background: bool = False

    def enabled(self, name: str) -> bool:
        return bool(getattr(self, name))


@dataclass
class ParamVector:
    """All differentiable render inputs for one scene."""

    joints: np.ndarray  # (N, 3) meters, source-frame coordinates
    widths: np.ndarray  # (M,) meters, positive
    appearances: np.ndarray  # (M, A)
    background: np.ndarray  # (A,)
    active: ActiveBlocks = field(default_factory=ActiveBlocks)

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float).reshape(-1, 3)
        self.widths = np.asarray(self.widths, dtype=float).reshape(-1)
        self.appearances = np.asarray(self.appearances, dtype=float)
        if self.appearances.ndim != 2:
            raise ShapeMismatch("appearances must be an M x A matrix")
        self.background = np.asarray(self.background, dtype=float).reshape(-1)

    def copy(self) -> "ParamVector":
        return ParamVector(
            joints=self.joints.copy(),
            widths=self.widths.copy(),
            appearances=self.appearances.copy(),
            background=self.background.copy(),
            active=self.active,
        )

    def validate_for(self, graph: SkeletonGraph) -> "ParamVector":
        problems = []
        if self.joints.shape[0] != graph.n_joints:
            problems.append(
                f"{self.joints.shape[0]} joints vs skeleton {graph.n_joints}"
            )
        if self.widths.shape[0] != graph.n_edges:
            problems.append(f"{self.widths.shape[0]} widths vs {graph.n_edges} edges")
        if np.any(self.widths <= 0) or not np.all(np.isfinite(self.widths)):
            problems.append("widths must be positive and finite")
        if self.appearances.shape[0] != graph.n_edges:
            problems.append(
                f"{self.appearances.shape[0]} appearance rows vs {graph.n_edges} edges"
            )
        if self.background.shape[0] != self.appearances.shape[1] and graph.n_edges > 0:
            problems.append("background dimension differs from appearance dimension")
        for name in ("joints", "appearances", "background"):
            if not np.all(np.isfinite(getattr(self, name))):
                problems.append(f"{name} must be finite")
        if problems:
            raise ValidationError(problems)
        return self


@dataclass
class GradientVector:
    """Same block structure as ParamVector; width entries live in the
    unconstrained softplus coordinate."""

    joints: np.ndarray
    widths: np.ndarray
    appearances: np.ndarray
    background: np.ndarray

    def max_abs(self) -> float:
        vals = [
            float(np.max(np.abs(b))) if b.size else 0.0
            for b in (self.joints, self.widths, self.appearances, self.background)
        ]
        return max(vals)

    def is_finite(self) -> bool:
        return all(
            np.all(np.isfinite(b))
            for b in (self.joints, self.widths, self.appearances, self.background)
        )


def _check_loss_kind(loss_kind: str) -> str:
    kind = loss_kind.lower()
    if kind not in LOSS_KINDS:
        raise ValidationError(f"loss_kind must be one of {LOSS_KINDS}, got {loss_kind!r}")
    return kind


def _scene_forward(params: ParamVector, graph: SkeletonGraph, cam: CameraModel, cfg: RenderConfig):
    graph.require_valid()
    cam.require_valid()
    params.validate_for(graph)
    cfg = replace(cfg, background=params.background)
    cfg.require_valid()
    if cam.width != cfg.width or cam.height != cfg.height:
        raise ShapeMismatch(
            f"camera size {cam.width}x{cam.height} differs from render config "
            f"{cfg.width}x{cfg.height}"
        )
    cam_joints = params.joints @ cam.R.T + cam.t
    edge_i = np.array([i for i, _ in graph.edges], dtype=int)
    edge_j = np.array([j for _, j in graph.edges], dtype=int)
    built = build_primitives_traced(cam_joints, edge_i, edge_j, params.widths)
    grid = make_rays(cam)
    if not np.all(grid.valid):
        bad = np.argwhere(~grid.valid)
        raise NoConvergence(f"ray undistortion failed at pixel {tuple(bad[0])}")
    rays_flat = grid.directions.reshape(-1, 3)
    core = forward_core(
        built.mus, built.rotations, built.lams, rays_flat, params.appearances,
        params.background, cfg,
    )
    return built, rays_flat, core, cfg


def _check_target(target: FeatureImage, cam: CameraModel, channels: int) -> np.ndarray:
    data = np.asarray(target.data, dtype=float)
    if data.shape != (cam.height, cam.width, channels):
        raise ShapeMismatch(
            f"target shape {data.shape} does not match render "
            f"({cam.height}, {cam.width}, {channels})"
        )
    return data


def render_loss(
    params: ParamVector,
    graph: SkeletonGraph,
    cam: CameraModel,
    cfg: RenderConfig,
    target: FeatureImage,
    loss_kind: str = "l2",
) -> float:
    """Mean pixel-to-pixel distance between the render of ``params`` and the
    target feature image (L1 or squared L2, averaged over pixels and channels)."""
    kind = _check_loss_kind(loss_kind)
    _, _, core, _ = _scene_forward(params, graph, cam, cfg)
    channels = params.background.shape[0]
    resid = core["image"].reshape(cam.height, cam.width, channels) - _check_target(
        target, cam, channels
    )
    if kind == "l1":
        return float(np.mean(np.abs(resid)))
    return float(np.mean(resid * resid))


def render_loss_grad(
    params: ParamVector,
    graph: SkeletonGraph,
    cam: CameraModel,
    cfg: RenderConfig,
    target: FeatureImage,
    loss_kind: str = "l2",
):
    """Loss value and its gradient for every active parameter block, by
    adjoint propagation through the full render chain. Matches central
    finite differences; the L1 subgradient at zero residual is 0."""
    kind = _check_loss_kind(loss_kind)
    built, rays_flat, core, cfg_used = _scene_forward(params, graph, cam, cfg)
    channels = params.background.shape[0]
    tdata = _check_target(target, cam, channels)
    n_pix = cam.height * cam.width
    resid = core["image"] - tdata.reshape(n_pix, channels)
    denom = resid.size
    if kind == "l1":
        loss = float(np.mean(np.abs(resid)))
        d_img = np.sign(resid) / denom
    else:
        loss = float(np.mean(resid * resid))
        d_img = 2.0 * resid / denom

    grad = _backward(params, built, rays_flat, core, cfg_used, cam, d_img)
    if not grad.is_finite():
        raise NonFiniteGradient("gradient contains NaN or Inf")
    return loss, grad


def _backward(params, built, rays_flat, core, cfg, cam, d_img) -> GradientVector:
    m = core["M"]
    n_joints = params.joints.shape[0]

    if m == 0:
        return _mask_blocks(
            params,
            g_joints=np.zeros((n_joints, 3)),
            g_w=np.zeros(0),
            g_a=np.zeros_like(params.appearances),
            g_b=np.sum(d_img, axis=0),
        )

    omega = core["omega"]
    om_fg = omega[:, :m]
    om_bg = omega[:, m]
    apps = params.appearances
    bg = params.background

    g_a = np.einsum("pm,pc->mc", om_fg, d_img)
    g_b = om_bg @ d_img
    s_fg = np.einsum("pc,mc->pm", d_img, apps)
    s_bg = d_img @ bg
    sbar = np.einsum("pm,pm->p", om_fg, s_fg) + om_bg * s_bg
    g_logit = om_fg * (s_fg - sbar[:, None])  # (P, M)
    g_logit_bg = om_bg * (s_bg - sbar)  # (P,)

    alpha = cfg.alpha
    sa = np.sqrt(alpha)
    rSr = core["rSr"]
    rSm = core["rSm"]
    z_star = core["z_star"]
    z4 = core["z4"]

    g_logf = g_logit
    g_z = g_logit * (-4.0 * z_star**3 / (1.0 + z4))
    if not core["bg_clamped"]:
        z_bg = core["z_bg"]
        d_logf_bg = dlog_erfc(z_bg / sa) / sa
        d_loglam_bg = -4.0 * z_bg**3 / (1.0 + z_bg**4)
        g_zbg = float(np.sum(g_logit_bg)) * (d_logf_bg + d_loglam_bg)
        g_z.reshape(-1)[core["argmax_flat"]] += cfg.beta * g_zbg

    lep = dlog_erfc(core["u"])
    sqrt_rsr = np.sqrt(rSr)
    g_rsr = (
        g_logf
        * (-0.5 / rSr + lep * rSm / (2.0 * sa * rSr * sqrt_rsr) - rSm * rSm / (alpha * rSr * rSr))
        + g_z * (-rSm / (rSr * rSr))
    )
    g_rsm = g_logf * (-lep / (sa * sqrt_rsr) + 2.0 * rSm / (alpha * rSr)) + g_z / rSr
    g_msm = -np.sum(g_logf, axis=0) / alpha  # (M,)

    inv_lam = core["inv_lam"]
    rt = core["rt"]
    mut = core["mut"]
    g_rt = (
        2.0 * g_rsr[..., None] * rt * inv_lam[None, :, :]
        + g_rsm[..., None] * (mut * inv_lam)[None, :, :]
    )
    g_mut = (
        np.einsum("pm,pmi->mi", g_rsm, rt) * inv_lam
        + 2.0 * g_msm[:, None] * mut * inv_lam
    )
    g_lam = -(inv_lam**2) * (
        np.einsum("pm,pmi->mi", g_rsr, rt * rt)
        + np.einsum("pm,pmi->mi", g_rsm, rt) * mut
        + g_msm[:, None] * mut * mut
    )
    g_rot = np.einsum("pa,pmb->mab", rays_flat, g_rt) + np.einsum(
        "ma,mb->mab", built.mus, g_mut
    )
    g_mu = np.einsum("mab,mb->ma", built.rotations, g_mut)

    g_joints_cam, g_w = _construction_backward(built, g_mu, g_rot, g_lam, n_joints)
    g_joints = g_joints_cam @ cam.R  # chain through joints_cam = joints @ R^T + t
    return _mask_blocks(params, g_joints, g_w, g_a, g_b)


def _construction_backward(built, g_mu, g_rot, g_lam, n_joints):
    g_len = g_lam[:, 0]
    g_w = g_lam[:, 1] + g_lam[:, 2]
    g_d = g_len[:, None] * built.dhat

    gen = built.generic
    if np.any(gen):
        G = g_rot[gen]
        v = built.v[gen]
        s = built.sinang[gen]
        rn = built.rej_norm[gen]
        c = built.cosang[gen]
        dhat = built.dhat[gen]
        n = built.lengths[gen]

        Gu = G[:, :, 0]
        Gtu = G[:, 0, :]
        Gv = np.einsum("kab,kb->ka", G, v)
        Gtv = np.einsum("kab,ka->kb", G, v)
        g_c = G[:, 0, 0] + np.einsum("ka,ka->k", v, Gv)
        g_s = np.einsum("ka,ka->k", v, Gu) - np.einsum("ka,ka->k", v, Gtu)
        g_v = (c - 1.0)[:, None] * (Gv + Gtv) + s[:, None] * (Gu - Gtu)
        g_c = g_c - (c / s) * g_s
        g_rej = (g_v - np.einsum("ka,ka->k", v, g_v)[:, None] * v) / rn[:, None]
        g_dhat = g_rej.copy()
        g_c = g_c - g_rej[:, 0]
        g_dhat[:, 0] += g_c
        g_d[gen] += (
            g_dhat - np.einsum("ka,ka->k", dhat, g_dhat)[:, None] * dhat
        ) / n[:, None]

    g_joints = np.zeros((n_joints, 3))
    np.add.at(g_joints, built.edge_i, 0.5 * g_mu - g_d)
    np.add.at(g_joints, built.edge_j, 0.5 * g_mu + g_d)
    return g_joints, g_w


def _mask_blocks(params, g_joints, g_w, g_a, g_b) -> GradientVector:
    """Apply the active mask and move width gradients into the softplus
    coordinate: d/du = d/dw * sigmoid(u) with sigmoid(u) = 1 - e^{-w}."""
    active = params.active
    if active.widths and g_w.size:
        g_w = g_w * (1.0 - np.exp(-params.widths))
    return GradientVector(
        joints=g_joints if active.joints else np.zeros_like(params.joints),
        widths=g_w if active.widths else np.zeros_like(params.widths),
        appearances=g_a if active.appearances else np.zeros_like(params.appearances),
        background=g_b if active.background else np.zeros_like(params.background),
    )


@dataclass
class BlockCheck:
    """Finite-difference comparison outcome for one parameter block."""

    name: str
    n_coords: int
    max_rel_err: float
    max_abs_err: float
    worst_coord: tuple
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{self.name}: coords={self.n_coords} max_rel_err={self.max_rel_err:.3e} "
            f"max_abs_err={self.max_abs_err:.3e} {status}"
        )


@dataclass
class GradCheckReport:
    blocks: list
    tol: float
    h: float

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    def format(self) -> str:
        lines = [b.line() for b in self.blocks]
        lines.append(f"gradcheck: {'PASS' if self.passed else 'FAIL'} (tol={self.tol}, h={self.h})")
        return "\n".join(lines)


def grad_check(
    params: ParamVector,
    graph: SkeletonGraph,
    cam: CameraModel,
    cfg: RenderConfig,
    target: FeatureImage,
    h: float = 1e-4,
    tol: float = 1e-3,
    loss_kind: str = "l2",
    abs_floor: float = 1e-7,
    gradient: GradientVector | None = None,
) -> GradCheckReport:
    """Compare the adjoint gradient against central finite differences,
    coordinate by coordinate, on every active block.

    A coordinate passes when |analytic - fd| <= max(tol * scale, abs_floor)
    with scale = max(|analytic|, |fd|). Width coordinates are perturbed in
    the unconstrained softplus coordinate, matching the reported gradient.
    ``gradient`` overrides the computed gradient (for fault injection).
    """
    if h <= 0 or tol <= 0:
        raise ValidationError("grad_check requires positive h and tol")
    if gradient is None:
        _, gradient = render_loss_grad(params, graph, cam, cfg, target, loss_kind)

    def loss_at(p):
        return render_loss(p, graph, cam, cfg, target, loss_kind)

    blocks = []
    for name in BLOCK_NAMES:
        if not params.active.enabled(name):
            continue
        analytic = getattr(gradient, name)
        base = getattr(params, name)
        if base.size == 0:
            blocks.append(BlockCheck(name, 0, 0.0, 0.0, (), True))
            continue
        if name == "widths":
            coords = inv_softplus(base.copy())
        else:
            coords = base.copy()
        flat = np.asarray(coords, dtype=float).reshape(-1)
        fd = np.zeros_like(flat)
        for idx in range(flat.size):
            step = h * max(1.0, abs(flat[idx]))
            for sgn, slot in ((1.0, 0), (-1.0, 1)):
                pert = flat.copy()
                pert[idx] += sgn * step
                trial = params.copy()
                value = pert.reshape(coords.shape)
                if name == "widths":
                    setattr(trial, name, softplus(value))
                else:
                    setattr(trial, name, value)
                if slot == 0:
                    up = loss_at(trial)
                else:
                    down = loss_at(trial)
            fd[idx] = (up - down) / (2.0 * step)
        an = np.asarray(analytic, dtype=float).reshape(-1)
        err = np.abs(an - fd)
        scale = np.maximum(np.abs(an), np.abs(fd))
        allowed = np.maximum(tol * scale, abs_floor)
        ok = err <= allowed
        rel = err / np.maximum(scale, abs_floor / tol)
        worst = int(np.argmax(rel))
        blocks.append(
            BlockCheck(
                name=name,
                n_coords=flat.size,
                max_rel_err=float(rel[worst]),
                max_abs_err=float(np.max(err)),
                worst_coord=tuple(np.unravel_index(worst, coords.shape)),
                passed=bool(np.all(ok)),
            )
        )
    return GradCheckReport(blocks=blocks, tol=tol, h=h)
