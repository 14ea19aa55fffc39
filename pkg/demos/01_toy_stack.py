"""Walk through the toy latent diffusion stack: codec, inversion, editing."""

# %%
import numpy as np

from videoguard import numerics as nm
from videoguard.diffusion import (AffineDenoiser, PromptEmbedding, ddim_invert, decode, edit,
                                  encode, make_schedule, null_prompt, sample_final)
from videoguard.synth import default_corpus, synth_video

sched = make_schedule(50)
print("alpha_bar at t=T:", sched.alpha_bar[-1])

# %%
# 64x64 frames become 16x16 latents (4x4 patch means)
v = synth_video(default_corpus()[0])
z = encode(v)
print("video", v.shape, "latent", z.shape)
print("codec is lossy at patch edges; max pixel error:", np.max(np.abs(decode(z) - v)))

# %%
# inversion with the null prompt, then sampling back
d = AffineDenoiser(z.shape[1:], 50)
zT = ddim_invert(sched, d, z, null_prompt())
back = sample_final(sched, d, zT, null_prompt())
print("relative inversion round-trip error:", nm.norm(back - z) / nm.norm(z))

# %%
# editing re-samples under the prompt
prompt = PromptEmbedding.from_label("a red car")
out = edit(sched, d, v, prompt)
print("edited frames differ from the source by", nm.norm(out - v))
