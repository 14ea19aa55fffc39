"""Protect one synthetic clip end to end and compare both edits."""

# %%
from videoguard.config import ExperimentConfig
from videoguard.pipeline import build_components, run_protect, run_stage1_pair

cfg = ExperimentConfig()
cfg.pso.iterations = 100  # default is 300; 100 is enough to see the effect
comp = build_components(cfg)

# %%
run = run_protect(cfg, comp)
print(run.report.to_text())
print("stage 2 objective: %.4g -> %.4g" % (run.protection.initial_objective,
                                           run.protection.objective))
print("linf budget used: %.2f / 255" % (255 * run.protection.linf))

# %%
# joint optimisation should beat per-frame balls of the same total radius
joint, frame = run_stage1_pair(cfg, comp)
print("stage 1 loss  joint %.2f  frame-wise %.2f" % (joint.loss, frame.loss))
