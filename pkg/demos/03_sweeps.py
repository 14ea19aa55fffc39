"""Budget and motion-weight sweeps on the five-clip corpus."""

# %%
import numpy as np

from videoguard.config import ExperimentConfig, VideoSource
from videoguard.pipeline import build_components, sweep_budget, sweep_lambda
from videoguard.synth import default_corpus

configs = [ExperimentConfig(video=VideoSource(pattern=p)) for p in default_corpus()]
for c in configs:
    c.pso.iterations = 100
comp = build_components(configs[0])

# %%
budgets = (4, 8, 16, 32)
rows = [sweep_budget(c, budgets, comp) for c in configs]
for j, b in enumerate(budgets):
    fc = np.mean([r[j]["frame_consistency_protected"] for r in rows])
    ssim = np.mean([r[j]["ssim_stealth"] for r in rows])
    print(f"budget {b:>2}/255  frame consistency {fc:.4f}  ssim {ssim:.3f}")

# %%
lambdas = (0.01, 2, 5, 50, 100)
rows = [sweep_lambda(c, lambdas, comp) for c in configs]
for j, lam in enumerate(lambdas):
    ms = np.mean([r[j]["motion_smoothness"] for r in rows])
    print(f"lambda {lam:>6}  motion smoothness {ms:.4f}")
