"""Self-checks for the stage-1 gradient.

Two checks run on a small latent so they finish in seconds:

* central finite differences along random single-coordinate probes, for
  any denoiser;
* for affine denoisers, a closed form built from dense rollout matrices
  (each column is the rollout of a basis vector), which needs no VJPs.
"""

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .diffusion import PromptEmbedding, make_denoiser, make_schedule, rollout
from .stage1 import Stage1Config, stage1_loss, stage1_loss_and_grad, target_trajectory

FD_TOLERANCE = 1e-3
CLOSED_FORM_TOLERANCE = 1e-6
CHECK_SHAPE = (4, 3, 4, 4)


@dataclass
class GradcheckResult:
    name: str
    max_error: float
    tolerance: float
    errors: list = field(default_factory=list)

    @property
    def passed(self):
        return self.max_error < self.tolerance


def _relative(a, b, floor):
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_difference_check(z0, cfg, sched, d, c, probes=10, h=1e-5, seed=0, name="fd"):
    """Compare the gradient with central differences on random coordinates.

    Errors are relative to the larger of the two values, floored at 1e-6 of
    the largest gradient entry so near-zero coordinates do not blow up.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    targets = target_trajectory(sched, d, cfg, c, z0.shape)
    _, g = stage1_loss_and_grad(z0, targets, cfg, sched, d, c)
    floor = 1e-6 * max(float(np.max(np.abs(g))), 1e-12)
    rng = np.random.default_rng(seed)
    idx = rng.choice(z0.size, size=probes, replace=False)
    errors = []
    for k in idx:
        e = np.zeros(z0.size)
        e[k] = h
        e = e.reshape(z0.shape)
        fd = (stage1_loss(z0 + e, targets, cfg, sched, d, c)
              - stage1_loss(z0 - e, targets, cfg, sched, d, c)) / (2 * h)
        errors.append(_relative(fd, g.flat[k], floor))
    return GradcheckResult(name, max(errors), FD_TOLERANCE, errors)


def _rollout_matrices(sched, d, c, shape, R):
    """Dense ``A_i`` and offsets ``b_i`` with ``rollout_i(z) = A_i z + b_i``."""
    n = int(np.prod(shape))
    base = rollout(sched, d, np.zeros(shape), c, R)
    cols = [[] for _ in range(R + 1)]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        steps = rollout(sched, d, e.reshape(shape), c, R)
        for i in range(R + 1):
            cols[i].append((steps[i] - base[i]).ravel())
    return [np.stack(col, axis=1) for col in cols], [b.ravel() for b in base]


def _diff_matrix(shape):
    n = int(np.prod(shape))
    eye = np.eye(n)
    return np.stack([nm.temporal_diff(eye[:, j].reshape(shape)).ravel() for j in range(n)], axis=1)


def closed_form_gradient(z0, cfg, sched, d, c):
    """Stage-1 gradient of an affine denoiser without any VJP code."""
    z0 = np.asarray(z0, dtype=np.float64)
    shape = z0.shape
    targets = target_trajectory(sched, d, cfg, c, shape)
    A, b = _rollout_matrices(sched, d, c, shape, cfg.R)
    D = _diff_matrix(shape)
    z = z0.ravel()
    g = np.zeros_like(z)
    for i in range(1, cfg.R + 1):
        zi = A[i] @ z + b[i]
        ti = targets.steps[i].ravel()
        r = zi - ti
        g += A[i].T @ (cfg.p * np.abs(r) ** (cfg.p - 1) * np.sign(r))
        if cfg.lam:
            src = zi if cfg.motion_mode == "per_step" else z
            m = D @ src - D @ ti
            back = D.T @ np.sign(m)
            g += cfg.lam * (A[i].T @ back if cfg.motion_mode == "per_step" else back)
    return g.reshape(shape)


def closed_form_check(z0, cfg, sched, d, c, name="closed-form"):
    targets = target_trajectory(sched, d, cfg, c, np.shape(z0))
    _, g = stage1_loss_and_grad(z0, targets, cfg, sched, d, c)
    ref = closed_form_gradient(z0, cfg, sched, d, c)
    err = nm.norm(g - ref) / max(nm.norm(ref), 1e-300)
    return GradcheckResult(name, err, CLOSED_FORM_TOLERANCE, [err])


def run_suite(seed=0, T=10, lam=5.0, R=3, probes=10):
    """Every check, on a seeded small problem. Returns a list of results."""
    sched = make_schedule(T)
    c = PromptEmbedding.from_label("a red car")
    z0 = np.random.default_rng(seed).normal(size=CHECK_SHAPE)
    results = []
    for variant in ("affine", "mlp"):
        d = make_denoiser(variant, CHECK_SHAPE[1:], T, seed=seed)
        for mode in ("per_step", "anchor"):
            cfg = Stage1Config(lam=lam, R=R, motion_mode=mode)
            results.append(finite_difference_check(
                z0, cfg, sched, d, c, probes=probes, seed=seed, name=f"fd/{variant}/{mode}"))
            if variant == "affine":
                results.append(closed_form_check(z0, cfg, sched, d, c,
                                                 name=f"closed-form/{variant}/{mode}"))
    return results
