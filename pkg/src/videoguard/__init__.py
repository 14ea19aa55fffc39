"""Two-stage protection of videos against diffusion-based editing, on a toy
latent diffusion stack small enough to run on a laptop."""

from .config import ConfigError, ExperimentConfig, load_config
from .diffusion import (AffineDenoiser, DdimSchedule, MlpDenoiser, PromptEmbedding, ddim_invert,
                        ddim_sample, decode, edit, encode, make_denoiser, make_schedule)
from .metrics import FrameEmbedder, ProtectionReport, frame_consistency, motion_smoothness, \
    text_alignment
from .stage1 import NumericalError, Stage1Config, framewise_pgd, pgd_optimize
from .stage2 import FusionBasis, PsoConfig, fuse, protect, pso_optimize
from .synth import SyntheticPattern, default_corpus, synth_video
from .videoio import read_video, write_video

__version__ = "0.1.0"
