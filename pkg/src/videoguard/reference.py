"""Published full-scale results, kept for side-by-side printing.

These come from Stable Diffusion-scale editors scored with CLIP and VBench,
so the toy proxies are compared with them by direction only.
"""

FRAME_CONSISTENCY = {"clean": 90.91, "protected": 81.55}
TEXT_ALIGNMENT = {"clean": 18.50, "protected": 8.46}
MOTION_SMOOTHNESS_BY_LAMBDA = {100: 84.0, 50: 84.5, 5: 80.0, 2: 87.0, 0.02: 87.8, 0.01: 87.6}
PERCEPTUAL_SSIM_ZONE = (0.75, 0.85)
BUDGETS = (4, 8, 16, 32)
FRAMES = 8
RESOLUTION = 512
