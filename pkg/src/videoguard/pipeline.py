"""End-to-end runs driven by an :class:`ExperimentConfig`."""

from contextlib import contextmanager
from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nm
from .config import ConfigError
from .diffusion import (PATCH, PromptEmbedding, ddim_invert, edit, edit_from_latent,
                        encode, make_denoiser, make_schedule, null_prompt)
from .metrics import FrameEmbedder, build_report, frame_consistency, motion_smoothness
from .stage1 import NumericalError, framewise_pgd, pgd_optimize
from .stage2 import FusionBasis, protect
from .synth import synth_video
from .videoio import load_video


class StageError(RuntimeError):
    """A failure tagged with the pipeline stage it happened in."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name):
    try:
        yield
    except (StageError, ConfigError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class Components:
    sched: object
    denoiser: object
    prompt: PromptEmbedding
    embedder: FrameEmbedder
    basis: FusionBasis


def latent_shape(cfg):
    r = cfg.resolution // PATCH
    return (cfg.channels, r, r)


def build_components(cfg):
    s = cfg.schedule
    with stage("setup"):
        sched = make_schedule(s.T, s.beta_start, s.beta_end)
        d = make_denoiser(cfg.denoiser.variant, latent_shape(cfg), s.T,
                          seed=cfg.denoiser.seed, **cfg.denoiser.params)
        basis = FusionBasis.cosine(cfg.basis.M, cfg.resolution, cfg.resolution, cfg.basis.gain)
    return Components(sched, d, PromptEmbedding.from_label(cfg.edit_prompt),
                      FrameEmbedder(cfg.channels, seed=cfg.embedder_seed), basis)


def source_video(cfg):
    """Render or load the configured video and check it against the config."""
    with stage("load"):
        if cfg.video.path is not None:
            v = load_video(cfg.video.path)
        else:
            v = synth_video(cfg.video.pattern, cfg.frames, cfg.resolution, cfg.resolution,
                            cfg.channels)
    want = (cfg.frames, cfg.channels, cfg.resolution, cfg.resolution)
    if v.shape != want:
        raise ConfigError(f"video has shape {v.shape}, config expects {want}")
    return v


def budget_violation(v, immunized, budget):
    """Exhaustive scan; largest amount by which any pixel breaks the constraints."""
    excess = np.max(np.abs(immunized - v)) - budget
    below = -np.min(immunized)
    above = np.max(immunized) - 1.0
    return float(max(excess, below, above, 0.0))


@dataclass
class ProtectRun:
    source: np.ndarray
    latent: np.ndarray
    anchor: object
    protection: object
    clean_edit: np.ndarray
    protected_edit: np.ndarray
    report: object
    violation: float


def run_protect(cfg, comp=None, v=None, epsilon_video=None, anchor=None):
    """Stage 1, stage 2, both edits and the report.

    ``anchor`` (an :class:`AnchorResult`) skips stage 1 so budget sweeps
    reuse one anchor; ``epsilon_video`` overrides the configured budget.
    """
    comp = comp or build_components(cfg)
    v = source_video(cfg) if v is None else v
    pso_cfg = cfg.pso if epsilon_video is None else replace(cfg.pso, epsilon_video=epsilon_video)
    with stage("invert"):
        Z0 = ddim_invert(comp.sched, comp.denoiser, encode(v), null_prompt())
        _require_finite(Z0, "inversion latent")
    if anchor is None:
        with stage("stage1"):
            anchor = pgd_optimize(Z0, cfg.stage1, comp.sched, comp.denoiser, comp.prompt)
    with stage("stage2"):
        prot = protect(v, anchor.anchor, comp.basis, pso_cfg, comp.sched, comp.denoiser)
    with stage("edit"):
        clean = edit(comp.sched, comp.denoiser, v, comp.prompt)
        protected = edit(comp.sched, comp.denoiser, prot.immunized, comp.prompt)
        _require_finite(protected, "protected edit")
    with stage("evaluate"):
        report = build_report(v, prot.immunized, clean, protected, comp.prompt, comp.embedder,
                              pso_cfg.epsilon_video, anchor.loss, prot.objective)
    violation = budget_violation(v, prot.immunized, pso_cfg.budget)
    return ProtectRun(v, Z0, anchor, prot, clean, protected, report, violation)


def _require_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{what} contains non-finite values")


def run_stage1_pair(cfg, comp=None, v=None):
    """Joint and frame-wise stage-1 results on the same latent."""
    comp = comp or build_components(cfg)
    v = source_video(cfg) if v is None else v
    with stage("stage1"):
        Z0 = ddim_invert(comp.sched, comp.denoiser, encode(v), null_prompt())
        joint = pgd_optimize(Z0, cfg.stage1, comp.sched, comp.denoiser, comp.prompt)
        frame = framewise_pgd(Z0, cfg.stage1, comp.sched, comp.denoiser, comp.prompt)
    return joint, frame


def sweep_budget(cfg, budgets, comp=None, v=None):
    """One stage-2 run per budget, all sharing one stage-1 anchor."""
    comp = comp or build_components(cfg)
    v = source_video(cfg) if v is None else v
    rows = []
    anchor = None
    for b in budgets:
        run = run_protect(cfg, comp, v, epsilon_video=b, anchor=anchor)
        anchor = run.anchor
        rows.append({
            "budget": float(b),
            "stage2_objective": run.protection.objective,
            "ssim_stealth": run.report.ssim_stealth,
            "frame_consistency_protected": run.report.frame_consistency_protected,
        })
    return rows


def sweep_lambda(cfg, lambdas, comp=None, v=None):
    """Motion smoothness of the edit decoded straight from each λ's anchor."""
    comp = comp or build_components(cfg)
    v = source_video(cfg) if v is None else v
    with stage("invert"):
        Z0 = ddim_invert(comp.sched, comp.denoiser, encode(v), null_prompt())
    rows = []
    for lam in lambdas:
        s1 = replace(cfg.stage1, lam=float(lam))
        with stage("stage1"):
            res = pgd_optimize(Z0, s1, comp.sched, comp.denoiser, comp.prompt)
        with stage("edit"):
            out = edit_from_latent(comp.sched, comp.denoiser, res.anchor, comp.prompt)
        rows.append({
            "lambda": float(lam),
            "stage1_loss": res.loss,
            "motion_smoothness": motion_smoothness(out),
            "frame_consistency": frame_consistency(out, comp.embedder),
        })
    return rows


def evaluate_pair(cfg, source, immunized, comp=None):
    """Report for a given source / immunized pair; stage losses are NaN."""
    comp = comp or build_components(cfg)
    if source.shape != immunized.shape:
        raise ConfigError("source and immunized videos differ in shape")
    with stage("edit"):
        clean = edit(comp.sched, comp.denoiser, source, comp.prompt)
        protected = edit(comp.sched, comp.denoiser, immunized, comp.prompt)
    budget = 255.0 * float(np.max(np.abs(immunized - source)))
    with stage("evaluate"):
        return build_report(source, immunized, clean, protected, comp.prompt, comp.embedder,
                            budget)


def report_budget_ok(run):
    """Budget and range hold exactly in float64."""
    return run.violation == 0.0 and nm.norm(run.protection.immunized - run.source, "linf") \
        <= run.protection.budget
