"""Stage 1: projected gradient descent on the inversion latent.

The whole ``F``-frame latent is one optimisation variable. The objective
rolls the candidate forward ``R`` sampling steps and penalises distance to
a target trajectory (content term) and to its frame differences (motion
term). The optimised latent becomes the anchor matched in stage 2.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import numerics as nm
from .diffusion import LatentTrajectory, ddim_sample_step_vjp, rollout


class NumericalError(RuntimeError):
    """Raised when an objective turns non-finite mid-run."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class Stage1Config:
    epsilon_latent: float = 8.0
    lam: float = 5.0
    R: int = 5
    p: float = 2.0
    steps: int = 40
    step_size: float | None = None
    step_rule: str = "normalized"
    motion_mode: str = "per_step"
    target_mode: str = "zero"
    target: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.epsilon_latent > 0:
            raise ValueError("epsilon_latent must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if int(self.R) != self.R or self.R < 1:
            raise ValueError("R must be a positive integer")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.step_rule not in ("raw", "sign", "normalized"):
            raise ValueError(f"unknown step_rule {self.step_rule!r}")
        if self.motion_mode not in ("per_step", "anchor"):
            raise ValueError(f"unknown motion_mode {self.motion_mode!r}")
        if self.target_mode not in ("zero", "custom"):
            raise ValueError(f"unknown target_mode {self.target_mode!r}")
        if self.target_mode == "custom" and self.target is None:
            raise ValueError("target_mode 'custom' needs a target tensor")

    @property
    def effective_step_size(self):
        if self.step_size is not None:
            return self.step_size
        return 2.0 * self.epsilon_latent / self.steps


@dataclass
class AnchorResult:
    """Outcome of :func:`pgd_optimize`.

    ``loss_history[k]`` is the best loss seen after ``k`` iterations (entry
    0 is the starting point), so it never increases. ``iterate_losses`` are
    the raw per-iterate values.
    """

    anchor: np.ndarray
    loss_history: list
    final_ball_distance: float
    iterate_losses: list = field(default_factory=list)
    iterate_distances: list = field(default_factory=list)
    best_iteration: int = 0

    @property
    def loss(self):
        return self.loss_history[-1]


def target_trajectory(sched, d, cfg, c, shape):
    """Rollout of the target latent for the first ``cfg.R`` sampling steps."""
    if cfg.R > sched.T:
        raise ValueError("R exceeds the number of diffusion steps")
    if cfg.target_mode == "zero":
        start = np.zeros(shape)
    else:
        start = np.asarray(cfg.target, dtype=np.float64)
        if start.shape != tuple(shape):
            raise ValueError("custom target does not match latent shape")
    return LatentTrajectory(steps=rollout(sched, d, start, c, cfg.R))


def _check_targets(z0, targets, cfg):
    if len(targets.steps) < cfg.R + 1:
        raise ValueError("target trajectory shorter than R")
    if targets.steps[0].shape != np.shape(z0):
        raise ValueError("candidate and targets disagree in shape")


def _terms(steps, targets, cfg):
    """Per-step residuals shared by the loss and its gradient."""
    out = []
    for i in range(1, cfg.R + 1):
        content = steps[i] - targets.steps[i]
        source = steps[i] if cfg.motion_mode == "per_step" else steps[0]
        motion = nm.temporal_diff(source) - nm.temporal_diff(targets.steps[i])
        out.append((content, motion))
    return out


def stage1_loss(z0, targets, cfg, sched, d, c):
    z0 = np.asarray(z0, dtype=np.float64)
    _check_targets(z0, targets, cfg)
    steps = rollout(sched, d, z0, c, cfg.R)
    total = 0.0
    for content, motion in _terms(steps, targets, cfg):
        total += nm.pnorm_p(content, cfg.p)
        if cfg.lam:
            total += cfg.lam * float(np.sum(np.abs(motion)))
    return total


def stage1_loss_and_grad(z0, targets, cfg, sched, d, c):
    """Loss and its exact gradient via reverse accumulation over R steps."""
    z0 = np.asarray(z0, dtype=np.float64)
    _check_targets(z0, targets, cfg)
    steps = rollout(sched, d, z0, c, cfg.R)
    terms = _terms(steps, targets, cfg)
    total = 0.0
    grads = [np.zeros_like(z0) for _ in steps]
    for i, (content, motion) in enumerate(terms, start=1):
        total += nm.pnorm_p(content, cfg.p)
        grads[i] += nm.pnorm_p_grad(content, cfg.p)
        if cfg.lam:
            total += cfg.lam * float(np.sum(np.abs(motion)))
            back = cfg.lam * nm.temporal_diff_adjoint(np.sign(motion))
            grads[i if cfg.motion_mode == "per_step" else 0] += back
    g = grads[cfg.R]
    for i in range(cfg.R, 0, -1):
        t = sched.T - i + 1
        g = ddim_sample_step_vjp(sched, d, steps[i - 1], t, c, g) + grads[i - 1]
    return total, g


def stage1_grad(z0, targets, cfg, sched, d, c):
    return stage1_loss_and_grad(z0, targets, cfg, sched, d, c)[1]


def project_l2_ball(z, center, radius):
    z = np.asarray(z, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if z.shape != center.shape:
        raise ValueError("shape mismatch in projection")
    if not radius > 0:
        raise ValueError("radius must be positive")
    diff = z - center
    dist = math.sqrt(np.sum(diff * diff))
    if dist <= radius:
        return z
    return center + diff * (radius / dist)


def _direction(g, rule):
    if rule == "sign":
        return np.sign(g)
    if rule == "normalized":
        n = math.sqrt(np.sum(g * g))
        return g / n if n > 0 else g
    return g


def pgd_optimize(Z0, cfg, sched, d, c, targets=None, mask=None, radius=None):
    """Projected gradient descent around ``Z0``; returns the best iterate.

    ``mask`` restricts the update to part of the latent (used by the
    frame-wise ablation); ``radius`` overrides ``cfg.epsilon_latent``.
    """
    Z0 = np.asarray(Z0, dtype=np.float64)
    if targets is None:
        targets = target_trajectory(sched, d, cfg, c, Z0.shape)
    radius = cfg.epsilon_latent if radius is None else radius
    eta = cfg.effective_step_size

    z = Z0.copy()
    loss, g = stage1_loss_and_grad(z, targets, cfg, sched, d, c)
    if not math.isfinite(loss):
        raise NumericalError("stage-1 loss is not finite at the start", 0)
    best, best_loss, best_it = z, loss, 0
    history, raw, dists = [loss], [loss], [0.0]
    for it in range(1, cfg.steps + 1):
        if mask is not None:
            g = g * mask
        z = project_l2_ball(z - eta * _direction(g, cfg.step_rule), Z0, radius)
        loss, g = stage1_loss_and_grad(z, targets, cfg, sched, d, c)
        if not math.isfinite(loss):
            raise NumericalError(f"stage-1 loss became non-finite at iteration {it}", it)
        raw.append(loss)
        dists.append(nm.norm(z - Z0))
        if loss < best_loss:
            best, best_loss, best_it = z, loss, it
        history.append(best_loss)
    return AnchorResult(
        anchor=best,
        loss_history=history,
        final_ball_distance=nm.norm(best - Z0),
        iterate_losses=raw,
        iterate_distances=dists,
        best_iteration=best_it,
    )


def framewise_pgd(Z0, cfg, sched, d, c, targets=None):
    """Ablation: optimise each frame on its own, as an image method would.

    Frame ``k`` is optimised with every other frame held at ``Z0`` and a
    ball of radius ``epsilon / sqrt(F)``, so the assembled latent stays in
    the joint feasible set. Each run ignores how the other frames move.
    """
    Z0 = np.asarray(Z0, dtype=np.float64)
    if targets is None:
        targets = target_trajectory(sched, d, cfg, c, Z0.shape)
    F = Z0.shape[0]
    radius = cfg.epsilon_latent / math.sqrt(F)
    anchor = Z0.copy()
    for k in range(F):
        mask = np.zeros_like(Z0)
        mask[k] = 1.0
        res = pgd_optimize(Z0, cfg, sched, d, c, targets=targets, mask=mask, radius=radius)
        anchor[k] = res.anchor[k]
    start = stage1_loss(Z0, targets, cfg, sched, d, c)
    final = stage1_loss(anchor, targets, cfg, sched, d, c)
    if not math.isfinite(final):
        raise NumericalError("assembled frame-wise latent has a non-finite loss", cfg.steps)
    improved = final < start
    best = anchor if improved else Z0.copy()
    return AnchorResult(
        anchor=best,
        loss_history=[start, min(start, final)],
        final_ball_distance=nm.norm(best - Z0),
        iterate_losses=[start, final],
        best_iteration=1 if improved else 0,
    )
