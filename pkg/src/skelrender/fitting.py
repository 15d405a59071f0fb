"""Inverse graphics by first-order optimization: recover pose, widths, and
appearances from a target feature image through the differentiable renderer.

The objective is image_weight * render_loss + reg_weight * appearance_reg,
optionally plus pose_weight * pose_loss against a supplied ground-truth
relative pose. Widths are stepped in their unconstrained softplus coordinate
so they stay positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraModel
from .errors import DivergenceDetected, ValidationError
from .gradients import (
    ParamVector,
    inv_softplus,
    render_loss_grad,
    softplus,
)
from .renderer import FeatureImage, RenderConfig
from .skeleton import RelativePose, SkeletonGraph


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings for one fit run."""

    iterations: int = 500
    step_size: float = 1e-2
    adaptive: bool = True  # per-parameter adaptive moments; plain descent otherwise
    loss_kind: str = "l2"
    image_weight: float = 10.0
    reg_weight: float = 1e-3  # appearance squared-norm regularizer
    pose_truth: RelativePose | None = None
    pose_weight: float = 1.0
    pose_confidence: np.ndarray | None = None
    tol: float = 0.0  # stop when the loss delta drops below this

    def validate(self):
        if self.iterations < 1:
            raise ValidationError("fit needs at least one iteration")
        if not (np.isfinite(self.step_size) and self.step_size > 0):
            raise ValidationError("step_size must be positive")
        if self.reg_weight < 0 or self.pose_weight < 0 or self.image_weight < 0:
            raise ValidationError("loss weights must be nonnegative")
        if self.tol < 0:
            raise ValidationError("tol must be nonnegative")


@dataclass
class FitTrace:
    """Per-iteration loss and gradient-norm history plus the final parameters."""

    losses: np.ndarray
    grad_norms: np.ndarray
    params: ParamVector
    iterations_run: int
    converged: bool


def appearance_reg(a: np.ndarray) -> float:
    """Squared Frobenius norm of the appearance matrix."""
    a = np.asarray(a, dtype=float)
    return float(np.sum(a * a))


class _AdamState:
    """Per-parameter adaptive first-order updates, decoupled decay disabled."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def begin_step(self):
        self.t += 1

    def update(self, name, x, g):
        m = self.m.get(name)
        if m is None:
            m = np.zeros_like(x)
            self.v[name] = np.zeros_like(x)
        v = self.v[name]
        m = self.beta1 * m + (1.0 - self.beta1) * g
        v = self.beta2 * v + (1.0 - self.beta2) * g * g
        self.m[name] = m
        self.v[name] = v
        mhat = m / (1.0 - self.beta1**self.t)
        vhat = v / (1.0 - self.beta2**self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class _DescentState:
    def __init__(self, lr):
        self.lr = lr

    def begin_step(self):
        pass

    def update(self, name, x, g):
        return x - self.lr * g


def _pose_term(params: ParamVector, fcfg: FitConfig):
    """Optional relative-pose supervision; returns (loss, joint gradient)."""
    truth = fcfg.pose_truth
    pred_rel = params.joints[1:] - params.joints[0]
    if pred_rel.shape != truth.joints.shape:
        raise ValidationError("pose_truth joint count does not match the scene")
    n = pred_rel.shape[0]
    conf = fcfg.pose_confidence
    if conf is None:
        conf = np.ones(n)
    conf = np.asarray(conf, dtype=float).reshape(-1)
    diff = pred_rel - truth.joints
    loss = float(np.mean(conf * np.sum(diff * diff, axis=1)))
    g_rel = 2.0 * conf[:, None] * diff / n
    g_joints = np.zeros_like(params.joints)
    g_joints[1:] = g_rel
    g_joints[0] = -np.sum(g_rel, axis=0)
    return loss, g_joints


def objective_and_grad(
    params: ParamVector,
    graph: SkeletonGraph,
    cam: CameraModel,
    cfg: RenderConfig,
    target: FeatureImage,
    fcfg: FitConfig,
):
    """Total fitting objective and its gradient on the active blocks."""
    img_loss, grad = render_loss_grad(params, graph, cam, cfg, target, fcfg.loss_kind)
    total = fcfg.image_weight * img_loss
    grad.joints *= fcfg.image_weight
    grad.widths *= fcfg.image_weight
    grad.appearances *= fcfg.image_weight
    grad.background *= fcfg.image_weight

    if fcfg.reg_weight > 0:
        total += fcfg.reg_weight * appearance_reg(params.appearances)
        if params.active.appearances:
            grad.appearances += fcfg.reg_weight * 2.0 * params.appearances
    if fcfg.pose_truth is not None and fcfg.pose_weight > 0:
        pose_l, pose_g = _pose_term(params, fcfg)
        total += fcfg.pose_weight * pose_l
        if params.active.joints:
            grad.joints += fcfg.pose_weight * pose_g
    return total, grad


def fit(
    init: ParamVector,
    graph: SkeletonGraph,
    cam: CameraModel,
    cfg: RenderConfig,
    target: FeatureImage,
    fcfg: FitConfig,
) -> FitTrace:
    """First-order descent on the fitting objective from ``init``.

    Records the loss and max-gradient-norm per iteration; stops at the
    iteration cap or once the loss delta falls below fcfg.tol. Raises
    DivergenceDetected if the loss leaves the finite range.
    """
    fcfg.validate()
    params = init.copy()
    opt = _AdamState(fcfg.step_size) if fcfg.adaptive else _DescentState(fcfg.step_size)

    width_u = inv_softplus(params.widths) if params.active.widths and params.widths.size else None

    losses = []
    grad_norms = []
    converged = False
    for it in range(fcfg.iterations):
        loss, grad = objective_and_grad(params, graph, cam, cfg, target, fcfg)
        if not np.isfinite(loss):
            raise DivergenceDetected(it, loss)
        losses.append(loss)
        grad_norms.append(grad.max_abs())
        if it > 0 and abs(losses[-2] - losses[-1]) < fcfg.tol:
            converged = True
            break

        opt.begin_step()
        if params.active.joints:
            params.joints = opt.update("joints", params.joints, grad.joints)
        if params.active.widths and width_u is not None:
            new_u = opt.update("widths", width_u, grad.widths)
            # Re-materialize widths only on an actual step; the softplus
            # round trip is not bit-exact and a one-ulp wobble would feed
            # the adaptive scaling noise instead of signal.
            if not np.array_equal(new_u, width_u):
                width_u = new_u
                params.widths = softplus(width_u)
        if params.active.appearances:
            params.appearances = opt.update("appearances", params.appearances, grad.appearances)
        if params.active.background:
            params.background = opt.update("background", params.background, grad.background)

    return FitTrace(
        losses=np.asarray(losses),
        grad_norms=np.asarray(grad_norms),
        params=params,
        iterations_run=len(losses),
        converged=converged,
    )
