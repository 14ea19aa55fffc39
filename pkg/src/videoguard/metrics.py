"""Desk-scale stand-ins for the evaluation metrics.

CLIP is replaced by a seeded random linear frame embedder; prompts are
placed in the same space by embedding the pattern they paint (see
:func:`videoguard.diffusion.concept_latent`).
"""

from dataclasses import dataclass, fields
import math

import numpy as np

from . import numerics as nm
from .diffusion import CONCEPT_GRID, PromptEmbedding, concept_latent
from .rng import Xoshiro256, derive_seed

EMBED_DIM = 32
EMBED_GRID = CONCEPT_GRID
SMOOTHNESS_FLOOR = 1e-6


class FrameEmbedder:
    """Unit-norm 32-d embedding of an 8x8 block-averaged frame.

    ``e(x) = normalize(W (pool(x) - 0.5) + b)``; the small bias keeps
    uniform grey frames away from the zero vector.
    """

    def __init__(self, channels=3, seed=0, dim=EMBED_DIM, bias_scale=0.05):
        self.channels = int(channels)
        self.dim = int(dim)
        self.seed = int(seed)
        n = self.channels * EMBED_GRID * EMBED_GRID
        gen = Xoshiro256(derive_seed(self.seed, f"embedder:{self.channels}:{self.dim}"))
        self.weight = gen.normal(self.dim * n).reshape(self.dim, n) / math.sqrt(n)
        self.bias = gen.normal(self.dim) * bias_scale

    def pool(self, frame):
        frame = np.asarray(frame, dtype=np.float64)
        C, H, W = frame.shape
        if C != self.channels:
            raise ValueError(f"embedder expects {self.channels} channels, got {C}")
        if H % EMBED_GRID or W % EMBED_GRID:
            raise ValueError(f"frame size must be a multiple of {EMBED_GRID}")
        bh, bw = H // EMBED_GRID, W // EMBED_GRID
        return frame.reshape(C, EMBED_GRID, bh, EMBED_GRID, bw).mean(axis=(2, 4))

    def _project(self, pooled_centered):
        out = self.weight @ pooled_centered.ravel() + self.bias
        return out / np.linalg.norm(out)

    def __call__(self, frame):
        return self._project(self.pool(frame) - 0.5)

    def text_vector(self, c):
        """Embedding of the image the prompt paints, centred like a frame."""
        pattern = 0.5 * concept_latent(c, (self.channels, EMBED_GRID, EMBED_GRID))
        return self._project(pattern)


def frame_consistency(v, e):
    """Mean cosine similarity of consecutive frame embeddings."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] < 2:
        raise ValueError("frame consistency needs at least 2 frames")
    embs = [e(f) for f in v]
    return float(np.mean([nm.cosine_similarity(a, b) for a, b in zip(embs[:-1], embs[1:])]))


def text_alignment_vector(v, text_vec, e):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] < 1:
        raise ValueError("text alignment needs at least one frame")
    return float(np.mean([np.dot(e(f), text_vec) for f in v]))


def text_alignment(v, c, e):
    """Mean frame-embedding dot product with the prompt's embedding.

    ``c`` is a :class:`PromptEmbedding`; anything else is taken to be a
    vector already in embedding space.
    """
    if isinstance(c, PromptEmbedding):
        return text_alignment_vector(v, e.text_vector(c), e)
    return text_alignment_vector(v, np.asarray(c, dtype=np.float64), e)


def motion_smoothness(v):
    """``1 - mean ||second temporal difference|| / mean ||frame||``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] < 3:
        raise ValueError("motion smoothness needs at least 3 frames")
    second = v[2:] - 2.0 * v[1:-1] + v[:-2]
    rough = np.mean([nm.norm(s) for s in second])
    scale = max(np.mean([nm.norm(f) for f in v]), SMOOTHNESS_FLOOR)
    return float(1.0 - rough / scale)


@dataclass
class ProtectionReport:
    frame_consistency_clean: float
    frame_consistency_protected: float
    text_alignment_clean: float
    text_alignment_protected: float
    motion_smoothness_clean: float
    motion_smoothness_protected: float
    ssim_stealth: float
    psnr_stealth: float
    budget: float
    stage1_final_loss: float
    stage2_final_objective: float

    def to_text(self):
        lines = [f"{f.name} = {getattr(self, f.name):.6g}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, val = line.partition("=")
            values[key.strip()] = float(val)
        names = {f.name for f in fields(cls)}
        if set(values) != names:
            raise ValueError(f"report keys {sorted(values)} do not match {sorted(names)}")
        return cls(**values)

    def is_finite(self):
        return all(math.isfinite(getattr(self, f.name)) for f in fields(self))


def build_report(source, immunized, clean_edit, protected_edit, c, e, budget,
                 stage1_final_loss=math.nan, stage2_final_objective=math.nan):
    """Assemble a :class:`ProtectionReport`; ``budget`` is in 1/255 units."""
    return ProtectionReport(
        frame_consistency_clean=frame_consistency(clean_edit, e),
        frame_consistency_protected=frame_consistency(protected_edit, e),
        text_alignment_clean=text_alignment(clean_edit, c, e),
        text_alignment_protected=text_alignment(protected_edit, c, e),
        motion_smoothness_clean=motion_smoothness(clean_edit),
        motion_smoothness_protected=motion_smoothness(protected_edit),
        ssim_stealth=nm.video_ssim(source, immunized),
        psnr_stealth=nm.psnr(source, immunized),
        budget=float(budget),
        stage1_final_loss=float(stage1_final_loss),
        stage2_final_objective=float(stage2_final_objective),
    )
