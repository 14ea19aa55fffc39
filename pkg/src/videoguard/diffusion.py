"""Deterministic toy latent video diffusion stack.

Latents are ``F x c x h x w`` arrays obtained from ``F x C x H x W`` videos
by ``patch x patch`` averaging. The noise predictors are small seeded
models that couple neighbouring frames, so perturbing one frame leaks into
the next one the way temporal attention does in real video editors.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np

from .rng import Xoshiro256, derive_seed

PATCH = 4
PROMPT_DIM = 16
CONCEPT_GRID = 8
CONCEPT_SEED = 0x5EED_C0_4CE97


@dataclass(frozen=True)
class DdimSchedule:
    alpha_bar: np.ndarray

    @property
    def T(self):
        return len(self.alpha_bar) - 1

    def check_step(self, t):
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside [1, {self.T}]")


def make_schedule(T=50, beta_start=1e-4, beta_end=0.02):
    """Linear-beta schedule; ``alpha_bar[k] = prod_{j<=k} (1 - beta_j)``."""
    if int(T) != T or T < 2:
        raise ValueError("schedule needs T >= 2")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, int(T))
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return DdimSchedule(alpha_bar=alpha_bar)


@dataclass(frozen=True)
class PromptEmbedding:
    """Unit vector standing in for a text encoder output.

    The empty label is the null prompt and maps to the zero vector; it is
    used to condition inversion.
    """

    vec: np.ndarray
    label: str = ""

    @classmethod
    def from_label(cls, label, dim=PROMPT_DIM):
        if label == "":
            return cls.null(dim)
        gen = Xoshiro256(derive_seed(CONCEPT_SEED, "prompt:" + label))
        vec = gen.normal(dim)
        return cls(vec=vec / np.linalg.norm(vec), label=label)

    @classmethod
    def null(cls, dim=PROMPT_DIM):
        return cls(vec=np.zeros(dim), label="")

    @property
    def dim(self):
        return len(self.vec)


@lru_cache(maxsize=8)
def _concept_grid(channels, dim):
    gen = Xoshiro256(derive_seed(CONCEPT_SEED, f"concept:{channels}:{dim}"))
    grid = gen.normal(dim * channels * CONCEPT_GRID * CONCEPT_GRID)
    grid = grid.reshape(dim, channels, CONCEPT_GRID, CONCEPT_GRID)
    grid.flags.writeable = False
    return grid


def concept_latent(c, shape):
    """Spatial pattern a prompt paints into a ``(c, h, w)`` latent frame.

    Shared by the denoisers (what the prompt adds) and by the text-alignment
    metric (what the prompt looks like), playing the role of a joint
    text-image space.
    """
    vec = c.vec if isinstance(c, PromptEmbedding) else np.asarray(c, dtype=np.float64)
    ch, h, w = shape
    grid = np.tensordot(vec, _concept_grid(ch, len(vec)), axes=1)
    ys = (np.arange(h) * CONCEPT_GRID) // h
    xs = (np.arange(w) * CONCEPT_GRID) // w
    return grid[:, ys][:, :, xs]


def encode(v, patch=PATCH):
    """Patch-average each frame and map [0, 1] to [-1, 1]."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim < 4:
        raise ValueError("video must be F x C x H x W")
    H, W = v.shape[-2:]
    if H % patch or W % patch:
        raise ValueError(f"frame size {H}x{W} not divisible by patch {patch}")
    pooled = v.reshape(v.shape[:-2] + (H // patch, patch, W // patch, patch)).mean(axis=(-3, -1))
    return 2.0 * pooled - 1.0


def decode(z, patch=PATCH):
    """Inverse affine map, nearest-neighbour upsampling, clamp to [0, 1]."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("cannot decode a non-finite latent")
    pix = (z + 1.0) / 2.0
    pix = np.repeat(np.repeat(pix, patch, axis=-2), patch, axis=-1)
    return np.clip(pix, 0.0, 1.0)


def frame_mixing_matrix(F, mixing):
    """``I + mixing * L`` with ``L`` the reflecting 1-D Laplacian over frames."""
    K = np.eye(F)
    for k in range(F - 1):
        K[k, k] -= mixing
        K[k + 1, k + 1] -= mixing
        K[k, k + 1] += mixing
        K[k + 1, k] += mixing
    return K


def _mix_frames(K, z):
    flat = z.reshape(z.shape[:-3] + (-1,))
    return np.matmul(K, flat).reshape(z.shape)


def _check_latent(z, shape):
    if z.ndim < 4 or z.shape[-3:] != shape:
        raise ValueError(f"latent of shape {z.shape} does not match denoiser {shape}")


class AffineDenoiser:
    """``eps = a_t K z - beta_t * concept(c) + b_t``.

    ``a_t`` is a per-step scalar gain and ``K`` mixes adjacent frames. The
    prompt term enters with a minus sign because sampling removes predicted
    noise, so the denoised result gains ``+concept(c)``. ``b_t = bias_gain
    * J`` with ``J`` a fixed seeded per-frame field.

    Latents may carry extra leading batch axes: ``(..., F, c, h, w)``.
    """

    variant = "affine"

    def __init__(self, latent_shape, T, seed=0, gain=0.1, mixing=0.25,
                 prompt_gain=0.3, bias_gain=1.0, bias_grid=4):
        self.latent_shape = tuple(latent_shape)
        self.T = int(T)
        self.seed = int(seed)
        self.mixing = float(mixing)
        self.bias_grid = bias_grid
        gen = Xoshiro256(derive_seed(self.seed, "affine:gains"))
        u = gen.uniform(self.T + 1)
        # index 0 unused; steps are 1..T
        self.gains = float(gain) * (0.5 + 0.5 * u)
        self.prompt_gains = np.full(self.T + 1, float(prompt_gain))
        self.bias_gains = np.full(self.T + 1, float(bias_gain))
        self._bias_frames = {}
        self._bias = {}
        self._mix = {}

    @classmethod
    def zero(cls, latent_shape, T):
        return cls(latent_shape, T, gain=0.0, prompt_gain=0.0, bias_gain=0.0)

    def _check(self, z, t):
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside [1, {self.T}]")
        _check_latent(z, self.latent_shape)

    def mixing_matrix(self, F):
        if F not in self._mix:
            self._mix[F] = frame_mixing_matrix(F, self.mixing)
        return self._mix[F]

    def bias_field(self, F):
        """Seeded ``F x c x h x w`` field; frame ``k`` does not depend on F."""
        if F not in self._bias:
            ch, h, w = self.latent_shape
            gh, gw = (h, w) if self.bias_grid is None else (self.bias_grid, self.bias_grid)
            for k in range(F):
                if k not in self._bias_frames:
                    gen = Xoshiro256(derive_seed(self.seed, f"affine:bias:{k}"))
                    grid = gen.normal(ch * gh * gw).reshape(ch, gh, gw)
                    ys = (np.arange(h) * gh) // h
                    xs = (np.arange(w) * gw) // w
                    self._bias_frames[k] = grid[:, ys][:, :, xs]
            field_ = np.stack([self._bias_frames[k] for k in range(F)])
            field_.flags.writeable = False
            self._bias[F] = field_
        return self._bias[F]

    def predict(self, z, t, c):
        z = np.asarray(z, dtype=np.float64)
        self._check(z, t)
        F = z.shape[-4]
        out = self.gains[t] * _mix_frames(self.mixing_matrix(F), z)
        vec = c.vec if isinstance(c, PromptEmbedding) else np.asarray(c, dtype=np.float64)
        if self.prompt_gains[t] != 0.0 and np.any(vec):
            out -= self.prompt_gains[t] * concept_latent(vec, self.latent_shape)
        if self.bias_gains[t] != 0.0:
            out += self.bias_gains[t] * self.bias_field(F)
        return out

    def vjp(self, z, t, c, cotangent):
        z = np.asarray(z, dtype=np.float64)
        g = np.asarray(cotangent, dtype=np.float64)
        self._check(z, t)
        if g.shape != z.shape:
            raise ValueError("cotangent shape does not match latent")
        K = self.mixing_matrix(z.shape[-4])
        return self.gains[t] * _mix_frames(K.T, g)


@lru_cache(maxsize=8)
def _mlp_weights(seed, latent_shape, hidden, prompt_dim, in_scale, out_scale):
    D = int(np.prod(latent_shape))
    n_in = 2 * D + prompt_dim
    gen = Xoshiro256(derive_seed(seed, f"mlp:{latent_shape}:{hidden}:{prompt_dim}"))
    w1 = gen.normal(hidden * n_in).reshape(hidden, n_in) * (in_scale / math.sqrt(n_in))
    b1 = gen.normal(hidden) * 0.1
    w2 = gen.normal(D * hidden).reshape(D, hidden) * (out_scale / math.sqrt(hidden))
    b2 = gen.normal(D) * 0.1
    for arr in (w1, b1, w2, b2):
        arr.flags.writeable = False
    return w1, b1, w2, b2


class MlpDenoiser:
    """Two-layer tanh network applied per frame to ``[z_k, z_{k-1}, c]``.

    The first frame sees a zero predecessor.
    """

    variant = "mlp"

    def __init__(self, latent_shape, T, seed=0, hidden=32, prompt_dim=PROMPT_DIM,
                 in_scale=1.0, out_scale=0.3):
        if hidden > 64:
            raise ValueError("hidden width is capped at 64")
        self.latent_shape = tuple(latent_shape)
        self.T = int(T)
        self.seed = int(seed)
        self.hidden = int(hidden)
        self.prompt_dim = int(prompt_dim)
        self.w1, self.b1, self.w2, self.b2 = _mlp_weights(
            self.seed, self.latent_shape, self.hidden, self.prompt_dim,
            float(in_scale), float(out_scale))

    def _check(self, z, t):
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside [1, {self.T}]")
        _check_latent(z, self.latent_shape)

    def _inputs(self, z, c):
        flat = z.reshape(z.shape[:-3] + (-1,))
        prev = np.zeros_like(flat)
        prev[..., 1:, :] = flat[..., :-1, :]
        vec = c.vec if isinstance(c, PromptEmbedding) else np.asarray(c, dtype=np.float64)
        return np.concatenate([flat, prev, np.broadcast_to(vec, flat.shape[:-1] + (len(vec),))],
                              axis=-1)

    def predict(self, z, t, c):
        z = np.asarray(z, dtype=np.float64)
        self._check(z, t)
        h = np.tanh(self._inputs(z, c) @ self.w1.T + self.b1)
        return (h @ self.w2.T + self.b2).reshape(z.shape)

    def vjp(self, z, t, c, cotangent):
        z = np.asarray(z, dtype=np.float64)
        g = np.asarray(cotangent, dtype=np.float64)
        self._check(z, t)
        if g.shape != z.shape:
            raise ValueError("cotangent shape does not match latent")
        D = int(np.prod(self.latent_shape))
        h = np.tanh(self._inputs(z, c) @ self.w1.T + self.b1)
        gh = (g.reshape(g.shape[:-3] + (D,)) @ self.w2) * (1.0 - h * h)
        gx = gh @ self.w1
        out = gx[..., :D].copy()
        out[..., :-1, :] += gx[..., 1:, D:2 * D]
        return out.reshape(z.shape)


def make_denoiser(variant, latent_shape, T, seed=0, **params):
    if variant == "affine":
        return AffineDenoiser(latent_shape, T, seed=seed, **params)
    if variant == "mlp":
        return MlpDenoiser(latent_shape, T, seed=seed, **params)
    if variant == "zero":
        return AffineDenoiser.zero(latent_shape, T)
    raise ValueError(f"unknown denoiser variant {variant!r}")


def predict_noise(d, z_t, t, c):
    return d.predict(z_t, t, c)


def predict_noise_vjp(d, z_t, t, c, cotangent):
    return d.vjp(z_t, t, c, cotangent)


def _coeffs(sched, t):
    ab_t, ab_prev = sched.alpha_bar[t], sched.alpha_bar[t - 1]
    return math.sqrt(ab_t), math.sqrt(1.0 - ab_t), math.sqrt(ab_prev), math.sqrt(1.0 - ab_prev)


def ddim_sample_step(sched, d, z_t, t, c):
    """Deterministic (eta = 0) DDIM update from step ``t`` to ``t - 1``."""
    sched.check_step(t)
    r_t, s_t, r_p, s_p = _coeffs(sched, t)
    eps = d.predict(z_t, t, c)
    # r_p * x0_hat + s_p * eps with x0_hat = (z_t - s_t * eps) / r_t
    return (r_p / r_t) * z_t + (s_p - r_p * s_t / r_t) * eps


def ddim_sample_step_vjp(sched, d, z_t, t, c, cotangent):
    """Pull a cotangent on ``z_{t-1}`` back to ``z_t``."""
    sched.check_step(t)
    r_t, s_t, r_p, s_p = _coeffs(sched, t)
    direct = (r_p / r_t) * cotangent
    eps_coeff = s_p - r_p * s_t / r_t
    if eps_coeff == 0.0:
        return direct
    return direct + eps_coeff * d.vjp(z_t, t, c, cotangent)


def ddim_inversion_step(sched, d, z_prev, t, c):
    """First-order DDIM inversion from ``t - 1`` to ``t``; eps taken at ``z_prev``."""
    sched.check_step(t)
    r_t, s_t, r_p, s_p = _coeffs(sched, t)
    eps = d.predict(z_prev, t, c)
    # r_t * x0_hat + s_t * eps with x0_hat = (z_prev - s_p * eps) / r_p
    return (r_t / r_p) * z_prev + (s_t - r_t * s_p / r_p) * eps


@dataclass
class LatentTrajectory:
    """Latents along a denoising run.

    ``steps[i]`` is the latent after ``i`` sampling steps, starting with the
    initial noise latent at ``steps[0]``. ``final`` is the fully denoised
    latent, which coincides with ``steps[-1]`` when every step was kept.
    """

    steps: list
    final: np.ndarray = field(default=None)

    def __post_init__(self):
        shapes = {s.shape for s in self.steps}
        if len(shapes) > 1:
            raise ValueError("trajectory entries disagree in shape")
        if self.final is None:
            self.final = self.steps[-1]

    def __len__(self):
        return len(self.steps)


def rollout(sched, d, Z, c, n_steps):
    """First ``n_steps`` sampling steps from the noise latent ``Z``."""
    steps = [np.asarray(Z, dtype=np.float64)]
    for i in range(1, n_steps + 1):
        steps.append(ddim_sample_step(sched, d, steps[-1], sched.T - i + 1, c))
    return steps


def ddim_sample(sched, d, Z, c, keep=None):
    """Run all T sampling steps, keeping the first ``keep`` intermediates."""
    T = sched.T
    keep = T if keep is None else keep
    if not 1 <= keep <= T:
        raise ValueError(f"keep must lie in [1, {T}]")
    steps = rollout(sched, d, Z, c, keep)
    z = steps[-1]
    for t in range(T - keep, 0, -1):
        z = ddim_sample_step(sched, d, z, t, c)
    return LatentTrajectory(steps=steps, final=z)


def ddim_invert(sched, d, z0, c):
    z = np.asarray(z0, dtype=np.float64)
    for t in range(1, sched.T + 1):
        z = ddim_inversion_step(sched, d, z, t, c)
    return z


def null_prompt(dim=PROMPT_DIM):
    return PromptEmbedding.null(dim)


def sample_final(sched, d, Z, c):
    z = np.asarray(Z, dtype=np.float64)
    for t in range(sched.T, 0, -1):
        z = ddim_sample_step(sched, d, z, t, c)
    return z


def edit(sched, d, v, c, patch=PATCH):
    """Invert under the null prompt, resample under ``c``, decode."""
    c_null = null_prompt(c.dim if isinstance(c, PromptEmbedding) else len(c))
    Z = ddim_invert(sched, d, encode(v, patch), c_null)
    return decode(sample_final(sched, d, Z, c), patch)


def edit_from_latent(sched, d, Z, c, patch=PATCH):
    """Decode the edit produced from an already inverted latent."""
    return decode(sample_final(sched, d, Z, c), patch)
