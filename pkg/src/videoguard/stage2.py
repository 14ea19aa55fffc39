"""Stage 2: gradient-free search for the pixel-space perturbation.

A perturbation is an ``F x M`` coefficient array. Each frame's row weights
``M`` orthonormal low-frequency cosine patterns; the result is clamped to
the pixel budget and added to the video. Particle swarm optimisation picks
the coefficients whose video inverts closest to the stage-1 anchor.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import numerics as nm
from .diffusion import PATCH, ddim_invert, encode, null_prompt
from .stage1 import NumericalError


def cosine_frequencies(M):
    """First ``M`` (u, v) frequency pairs ordered by u + v, then by u."""
    pairs = []
    total = 0
    while len(pairs) < M:
        for u in range(total + 1):
            pairs.append((u, total - u))
        total += 1
    return pairs[:M]


def _dct_vector(n, k):
    x = np.cos(math.pi * k * (np.arange(n) + 0.5) / n)
    return x / np.linalg.norm(x)


@dataclass
class FusionBasis:
    """``M`` orthonormal 2-D cosine patterns shared across channels.

    ``gain`` converts unit coefficients to pixel values: a coefficient
    ``a`` on pattern ``m`` adds ``gain * a * basis[m]``.
    """

    basis: np.ndarray
    gain: float

    @classmethod
    def cosine(cls, M, H, W, gain=None):
        if M < 1 or M > H * W:
            raise ValueError("M must lie in [1, H*W]")
        pats = []
        for u, v in cosine_frequencies(M):
            pats.append(np.outer(_dct_vector(H, v), _dct_vector(W, u)))
        if gain is None:
            # unit coefficient on the DC pattern shifts brightness by 32/255
            gain = math.sqrt(H * W) * 32.0 / 255.0
        return cls(basis=np.stack(pats), gain=float(gain))

    @property
    def M(self):
        return self.basis.shape[0]

    @property
    def frame_shape(self):
        return self.basis.shape[1:]

    def gram(self):
        flat = self.basis.reshape(self.M, -1)
        return flat @ flat.T


def raw_perturbation(delta, basis):
    """Unclamped per-frame pattern mix, ``F x H x W``."""
    return basis.gain * np.tensordot(delta, basis.basis, axes=1)


def fuse(v, delta, basis, budget):
    """Add the clamped low-frequency perturbation; keeps ``|V* - V| <= budget``.

    ``delta`` is ``F x M``, or ``P x F x M`` to fuse a batch of candidates.
    """
    v = np.asarray(v, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape[-2:] != (v.shape[0], basis.M):
        raise ValueError(f"delta must be {(v.shape[0], basis.M)}, got {delta.shape}")
    if v.shape[2:] != basis.frame_shape:
        raise ValueError("basis does not match the frame size")
    if budget < 0:
        raise ValueError("budget must be non-negative")
    pert = np.clip(raw_perturbation(delta, basis), -budget, budget)
    out = np.clip(v + pert[..., None, :, :], 0.0, 1.0)
    # v + pert can round one ulp past the budget; step those pixels back toward v
    src = np.broadcast_to(v, out.shape)
    over = np.abs(out - src) > budget
    while over.any():
        out[over] = np.nextafter(out[over], src[over])
        over = np.abs(out - src) > budget
    return out


def inversion_latent(v, sched, d, patch=PATCH):
    return ddim_invert(sched, d, encode(v, patch), null_prompt())


def stage2_objective(delta, v, anchor, basis, budget, sched, d, patch=PATCH):
    """Squared L2 distance between the perturbed video's inversion and the anchor."""
    Z = inversion_latent(fuse(v, delta, basis, budget), sched, d, patch)
    anchor = np.asarray(anchor, dtype=np.float64)
    if Z.shape != anchor.shape:
        raise ValueError("anchor does not match the inversion latent shape")
    diff = Z - anchor
    return float(np.sum(diff * diff))


def stage2_objective_batch(deltas, v, anchor, basis, budget, sched, d, patch=PATCH):
    """:func:`stage2_objective` for a ``P x F x M`` stack of candidates."""
    Z = inversion_latent(fuse(v, deltas, basis, budget), sched, d, patch)
    anchor = np.asarray(anchor, dtype=np.float64)
    if Z.shape[1:] != anchor.shape:
        raise ValueError("anchor does not match the inversion latent shape")
    diff = (Z - anchor).reshape(Z.shape[0], -1)
    return np.einsum("pi,pi->p", diff, diff)


@dataclass
class PsoConfig:
    particles: int = 30
    iterations: int = 300
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    velocity_clamp: float = 0.2
    epsilon_video: float = 16.0
    seed: int = 0

    def __post_init__(self):
        if int(self.particles) != self.particles or self.particles < 1:
            raise ValueError("particles must be a positive integer")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 < self.inertia < 1.0:
            raise ValueError("inertia must lie in (0, 1)")
        if not (self.cognitive > 0 and self.social > 0):
            raise ValueError("cognitive and social weights must be positive")
        if not self.velocity_clamp > 0:
            raise ValueError("velocity_clamp must be positive")
        if self.epsilon_video < 0:
            raise ValueError("epsilon_video must be non-negative")

    @property
    def budget(self):
        """Pixel budget in [0, 1] units."""
        return self.epsilon_video / 255.0


@dataclass
class SwarmState:
    positions: np.ndarray
    velocities: np.ndarray
    pbest_positions: np.ndarray
    pbest_values: np.ndarray
    gbest_position: np.ndarray
    gbest_value: float
    iteration: int = 0


@dataclass
class PsoResult:
    best: np.ndarray
    value: float
    history: list = field(default_factory=list)
    state: SwarmState | None = None


# Init box is [-1, 1]; velocities are clamped to a fraction of its width.
_INIT_LOW, _INIT_HIGH = -1.0, 1.0


def _draws(seed, iteration, particle, n):
    """Counter-based random numbers: one stream per (iteration, particle)."""
    gen = np.random.Generator(np.random.Philox(key=int(seed) & ((1 << 64) - 1),
                                               counter=[iteration, particle, 0, 0]))
    return gen.random(n)


def _evaluate_all(objective, pos, shape, batch_objective):
    if batch_objective is not None:
        vals = np.asarray(batch_objective(pos.reshape((-1,) + shape)), dtype=np.float64)
    else:
        vals = np.array([float(objective(x.reshape(shape))) for x in pos])
    return np.where(np.isfinite(vals), vals, math.inf)


def pso_optimize(objective, shape, cfg, init=None, callback=None, batch_objective=None):
    """Global-best PSO minimising ``objective`` over arrays of ``shape``.

    Positions start uniform in ``[-1, 1]`` (or at ``init``, one row per
    particle) with zero velocity. Non-finite objective values count as
    ``+inf``. Random draws for particle ``p`` at iteration ``k`` come from a
    Philox stream keyed by the seed with counter ``(k, p)``, so evaluation
    order does not affect the result. ``batch_objective``, when given,
    scores a whole ``P x shape`` stack at once and must agree with
    ``objective`` row by row.
    """
    shape = tuple(shape)
    n = int(np.prod(shape))
    P = cfg.particles
    if init is None:
        pos = np.stack([_INIT_LOW + (_INIT_HIGH - _INIT_LOW) * _draws(cfg.seed, 0, p, n)
                        for p in range(P)])
    else:
        pos = np.asarray(init, dtype=np.float64).reshape(P, n).copy()
    vel = np.zeros_like(pos)
    vmax = cfg.velocity_clamp * (_INIT_HIGH - _INIT_LOW)

    values = _evaluate_all(objective, pos, shape, batch_objective)
    if not np.any(np.isfinite(values)):
        raise NumericalError("every particle has a non-finite objective", 0)
    pbest, pbest_val = pos.copy(), values.copy()
    g = int(np.argmin(pbest_val))
    gbest, gbest_val = pbest[g].copy(), float(pbest_val[g])
    history = [gbest_val]

    for it in range(1, cfg.iterations + 1):
        for p in range(P):
            r = _draws(cfg.seed, it, p, 2 * n)
            vel[p] = (cfg.inertia * vel[p]
                      + cfg.cognitive * r[:n] * (pbest[p] - pos[p])
                      + cfg.social * r[n:] * (gbest - pos[p]))
        np.clip(vel, -vmax, vmax, out=vel)
        pos += vel
        values = _evaluate_all(objective, pos, shape, batch_objective)
        better = values < pbest_val
        pbest[better] = pos[better]
        pbest_val[better] = values[better]
        g = int(np.argmin(pbest_val))
        if pbest_val[g] < gbest_val:
            gbest, gbest_val = pbest[g].copy(), float(pbest_val[g])
        history.append(gbest_val)
        if callback is not None:
            callback(it, gbest_val)
    if not math.isfinite(gbest_val):
        raise NumericalError("swarm never produced a finite objective", cfg.iterations)
    state = SwarmState(pos.reshape((P,) + shape), vel.reshape((P,) + shape),
                       pbest.reshape((P,) + shape), pbest_val,
                       gbest.reshape(shape), gbest_val, cfg.iterations)
    return PsoResult(best=gbest.reshape(shape), value=gbest_val, history=history, state=state)


@dataclass
class ProtectResult:
    immunized: np.ndarray
    delta: np.ndarray
    objective: float
    initial_objective: float
    ssim: float
    budget: float
    linf: float
    l2: float
    history: list = field(default_factory=list)


def protect(v, anchor, basis, cfg, sched, d, patch=PATCH):
    """Search the perturbation whose inversion lands on ``anchor`` and apply it."""
    v = np.asarray(v, dtype=np.float64)
    budget = cfg.budget
    shape = (v.shape[0], basis.M)

    def objective(delta):
        return stage2_objective(delta, v, anchor, basis, budget, sched, d, patch)

    def batch(deltas):
        return stage2_objective_batch(deltas, v, anchor, basis, budget, sched, d, patch)

    res = pso_optimize(objective, shape, cfg, batch_objective=batch)
    immunized = fuse(v, res.best, basis, budget)
    diff = immunized - v
    return ProtectResult(
        immunized=immunized,
        delta=res.best,
        objective=res.value,
        initial_objective=res.history[0],
        ssim=nm.video_ssim(v, immunized),
        budget=budget,
        linf=float(np.max(np.abs(diff))),
        l2=nm.norm(diff),
        history=res.history,
    )
