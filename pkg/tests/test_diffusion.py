import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from videoguard.diffusion import (AffineDenoiser, MlpDenoiser, PromptEmbedding, concept_latent,
                                  ddim_invert, ddim_inversion_step, ddim_sample,
                                  ddim_sample_step, ddim_sample_step_vjp, decode, edit,
                                  encode, frame_mixing_matrix, make_denoiser, make_schedule,
                                  null_prompt, predict_noise, predict_noise_vjp, rollout,
                                  sample_final, DdimSchedule)
from videoguard.synth import default_corpus, synth_video

from conftest import SMALL

# alpha_bar[50] of the default schedule, from a 40-digit mpmath product.
ALPHA_BAR_T50 = 0.60295159732971490345
# Affine (default params) invert/sample relative error on the five corpus clips.
ROUND_TRIP = [0.0008610739638330484, 0.004630616197961013, 0.001290009095307963,
              0.0010059088114884624, 0.0012000355065200365]


def test_schedule_closed_form():
    s = make_schedule(2, 0.01, 0.01)
    assert np.allclose(s.alpha_bar, [1.0, 0.99, 0.9801], atol=1e-15)
    assert s.T == 2


def test_schedule_default_product():
    s = make_schedule()
    assert s.alpha_bar[50] == pytest.approx(ALPHA_BAR_T50, abs=1e-9)
    assert s.alpha_bar[0] == 1.0
    assert np.all(np.diff(s.alpha_bar) < 0)


@pytest.mark.parametrize("args", [(1,), (10, 0.0, 0.01), (10, 0.02, 0.01), (10, 0.1, 1.0)])
def test_schedule_rejects(args):
    with pytest.raises(ValueError):
        make_schedule(*args)


def test_encode_constants():
    assert np.array_equal(encode(np.full((3, 3, 8, 8), 0.5)), np.zeros((3, 3, 2, 2)))
    assert np.array_equal(encode(np.ones((3, 3, 8, 8))), np.ones((3, 3, 2, 2)))
    with pytest.raises(ValueError):
        encode(np.zeros((3, 3, 6, 8)))


def test_encode_matches_patch_loop(rng):
    v = rng.uniform(size=(2, 3, 12, 8))
    z = encode(v)
    for f in range(2):
        for c in range(3):
            for i in range(3):
                for j in range(2):
                    m = sum(v[f, c, 4 * i + a, 4 * j + b] for a in range(4) for b in range(4)) / 16
                    assert z[f, c, i, j] == pytest.approx(2 * m - 1, abs=1e-6)


def test_decode_cases(rng):
    assert np.array_equal(decode(np.zeros((2, 3, 2, 2))), np.full((2, 3, 8, 8), 0.5))
    blocks = rng.uniform(size=(2, 3, 2, 2))
    v = np.repeat(np.repeat(blocks, 4, axis=-2), 4, axis=-1)
    assert np.array_equal(decode(encode(v)), v)
    with pytest.raises(ValueError):
        decode(np.array([[[[np.nan]]]]))


def test_decode_error_bounded_by_patch_range(rng):
    v = rng.uniform(size=(2, 3, 8, 8))
    err = np.abs(decode(encode(v)) - v)
    for f in range(2):
        for c in range(3):
            for i in range(2):
                for j in range(2):
                    patch = v[f, c, 4 * i:4 * i + 4, 4 * j:4 * j + 4]
                    spread = patch.max() - patch.min()
                    assert err[f, c, 4 * i:4 * i + 4, 4 * j:4 * j + 4].max() <= spread + 1e-12


def test_prompt_embeddings():
    c = PromptEmbedding.from_label("a red car")
    assert c.dim == 16 and np.linalg.norm(c.vec) == pytest.approx(1.0)
    assert np.array_equal(PromptEmbedding.from_label("").vec, np.zeros(16))
    assert np.array_equal(c.vec, PromptEmbedding.from_label("a red car").vec)
    assert not np.allclose(c.vec, PromptEmbedding.from_label("a blue boat").vec)


def test_concept_latent_linear(prompt):
    a = concept_latent(prompt, SMALL)
    assert np.allclose(concept_latent(2 * prompt.vec, SMALL), 2 * a)
    assert np.array_equal(concept_latent(np.zeros(16), SMALL), np.zeros(SMALL))


def test_zero_affine_predicts_zero(rng, prompt):
    d = AffineDenoiser.zero(SMALL, 10)
    assert np.array_equal(predict_noise(d, rng.normal(size=(3,) + SMALL), 5, prompt),
                          np.zeros((3,) + SMALL))


def test_affine_linear_without_offsets(rng):
    d = AffineDenoiser(SMALL, 10, prompt_gain=0.0, bias_gain=0.0)
    z = rng.normal(size=(4,) + SMALL)
    c = null_prompt()
    assert np.allclose(d.predict(2 * z, 3, c), 2 * d.predict(z, 3, c), atol=1e-14)


def _mlp_loop(d, z, c):
    """Scalar-loop evaluation of the two-layer formula."""
    F = z.shape[0]
    D = int(np.prod(d.latent_shape))
    out = np.zeros((F, D))
    flat = z.reshape(F, D)
    for k in range(F):
        prev = flat[k - 1] if k > 0 else np.zeros(D)
        x = list(flat[k]) + list(prev) + list(c.vec)
        h = []
        for j in range(d.hidden):
            s = d.b1[j]
            for i, xi in enumerate(x):
                s += d.w1[j, i] * xi
            h.append(math.tanh(s))
        for o in range(D):
            s = d.b2[o]
            for j in range(d.hidden):
                s += d.w2[o, j] * h[j]
            out[k, o] = s
    return out.reshape(z.shape)


def test_mlp_matches_scalar_loop(rng, mlp_small, prompt):
    z = rng.normal(size=(3,) + SMALL)
    assert np.allclose(mlp_small.predict(z, 4, prompt), _mlp_loop(mlp_small, z, prompt),
                       atol=1e-6)


def test_mlp_hidden_cap():
    with pytest.raises(ValueError):
        MlpDenoiser(SMALL, 10, hidden=65)


def test_affine_vjp_is_transpose(rng, affine_small, prompt):
    F = 4
    n = F * int(np.prod(SMALL))
    z = rng.normal(size=(F,) + SMALL)
    base = affine_small.predict(z, 6, prompt)
    A = np.stack([(affine_small.predict(z + e.reshape(z.shape), 6, prompt) - base).ravel()
                  for e in np.eye(n)], axis=1)
    g = rng.normal(size=z.shape)
    assert np.allclose(predict_noise_vjp(affine_small, z, 6, prompt, g).ravel(), A.T @ g.ravel(),
                       atol=1e-12)


@pytest.mark.parametrize("variant", ["affine", "mlp"])
def test_vjp_finite_difference(variant, rng, prompt):
    d = make_denoiser(variant, SMALL, 10, seed=3)
    z = rng.normal(size=(4,) + SMALL)
    g = rng.normal(size=z.shape)
    vjp = d.vjp(z, 7, prompt, g)
    assert np.array_equal(d.vjp(z, 7, prompt, np.zeros_like(z)), np.zeros_like(z))
    h = 1e-4
    for k in rng.choice(z.size, 10, replace=False):
        e = np.zeros(z.size)
        e[k] = h
        e = e.reshape(z.shape)
        fd = np.sum(g * (d.predict(z + e, 7, prompt) - d.predict(z - e, 7, prompt))) / (2 * h)
        assert abs(fd - vjp.flat[k]) <= 1e-3 * max(abs(fd), abs(vjp.flat[k]), 1e-8)


def test_frame_coupling(rng, affine_small, prompt):
    z = rng.normal(size=(5,) + SMALL)
    dz = np.zeros_like(z)
    dz[2] = rng.normal(size=SMALL)
    diff = affine_small.predict(z + dz, 4, prompt) - affine_small.predict(z, 4, prompt)
    assert np.linalg.norm(diff[3]) > 0
    assert np.linalg.norm(diff[4]) == 0


def test_mixing_matrix_rows_sum_to_one():
    K = frame_mixing_matrix(6, 0.25)
    assert np.allclose(K.sum(axis=1), 1.0)
    assert np.allclose(K, K.T)


def test_batched_predict_matches_loop(rng, mlp_small, affine_small, prompt):
    z = rng.normal(size=(3, 4) + SMALL)
    for d in (mlp_small, affine_small):
        batched = d.predict(z, 2, prompt)
        for b in range(3):
            assert np.allclose(batched[b], d.predict(z[b], 2, prompt), atol=1e-14)


def test_denoiser_rejects_bad_inputs(affine_small, prompt):
    with pytest.raises(ValueError):
        affine_small.predict(np.zeros((2, 3, 5, 5)), 1, prompt)
    with pytest.raises(ValueError):
        affine_small.predict(np.zeros((2,) + SMALL), 11, prompt)
    with pytest.raises(ValueError):
        make_denoiser("transformer", SMALL, 10)


def test_sample_step_zero_denoiser(short_sched, rng, prompt):
    d = AffineDenoiser.zero(SMALL, 10)
    z = rng.normal(size=(3,) + SMALL)
    out = ddim_sample_step(short_sched, d, z, 6, prompt)
    ab = short_sched.alpha_bar
    assert np.allclose(out, math.sqrt(ab[5] / ab[6]) * z, rtol=1e-14)
    assert np.allclose(ddim_inversion_step(short_sched, d, out, 6, prompt), z, rtol=1e-14)


def test_sample_step_noop_when_alpha_flat(rng, affine_small, prompt):
    sched = DdimSchedule(alpha_bar=np.array([1.0, 0.9, 0.9]))
    d = AffineDenoiser(SMALL, 2)
    z = rng.normal(size=(3,) + SMALL)
    assert np.allclose(ddim_sample_step(sched, d, z, 2, prompt), z, atol=1e-15)


def test_sample_step_formula(short_sched, rng, affine_small, prompt):
    z = rng.normal(size=(3,) + SMALL)
    t = 4
    ab_t, ab_p = short_sched.alpha_bar[t], short_sched.alpha_bar[t - 1]
    eps = affine_small.predict(z, t, prompt)
    x0 = (z - math.sqrt(1 - ab_t) * eps) / math.sqrt(ab_t)
    expected = math.sqrt(ab_p) * x0 + math.sqrt(1 - ab_p) * eps
    assert np.allclose(ddim_sample_step(short_sched, affine_small, z, t, prompt), expected,
                       atol=1e-12)


def test_sample_step_vjp_finite_difference(short_sched, rng, mlp_small, prompt):
    z = rng.normal(size=(3,) + SMALL)
    g = rng.normal(size=z.shape)
    vjp = ddim_sample_step_vjp(short_sched, mlp_small, z, 9, prompt, g)
    h = 1e-5
    for k in rng.choice(z.size, 10, replace=False):
        e = np.zeros(z.size)
        e[k] = h
        e = e.reshape(z.shape)
        fd = np.sum(g * (ddim_sample_step(short_sched, mlp_small, z + e, 9, prompt)
                         - ddim_sample_step(short_sched, mlp_small, z - e, 9, prompt))) / (2 * h)
        assert fd == pytest.approx(vjp.flat[k], rel=1e-6, abs=1e-9)


def test_constant_eps_round_trip_exact(short_sched, rng, prompt):
    d = AffineDenoiser(SMALL, 10, gain=0.0, prompt_gain=0.0, bias_gain=1.0)
    z = rng.normal(size=(3,) + SMALL)
    back = sample_final(short_sched, d, ddim_invert(short_sched, d, z, prompt), prompt)
    assert np.allclose(back, z, rtol=1e-10, atol=1e-12)


def test_zero_denoiser_round_trip(sched, rng):
    d = AffineDenoiser.zero((3, 16, 16), 50)
    z = rng.normal(size=(8, 3, 16, 16))
    c = null_prompt()
    back = sample_final(sched, d, ddim_invert(sched, d, z, c), c)
    assert np.linalg.norm(back - z) / np.linalg.norm(z) < 1e-6


def test_affine_round_trip_corpus(sched):
    d = AffineDenoiser((3, 16, 16), 50)
    c = null_prompt()
    for expected, p in zip(ROUND_TRIP, default_corpus()):
        z = encode(synth_video(p))
        back = sample_final(sched, d, ddim_invert(sched, d, z, c), c)
        err = np.linalg.norm(back - z) / np.linalg.norm(z)
        assert err == pytest.approx(expected, rel=1e-6)
        assert err < 5e-2


def test_ddim_sample_keep(short_sched, rng, affine_small, prompt):
    Z = rng.normal(size=(3,) + SMALL)
    traj = ddim_sample(short_sched, affine_small, Z, prompt, keep=3)
    assert len(traj) == 4
    assert np.array_equal(traj.final, sample_final(short_sched, affine_small, Z, prompt))
    assert np.array_equal(traj.steps[2], rollout(short_sched, affine_small, Z, prompt, 2)[2])
    with pytest.raises(ValueError):
        ddim_sample(short_sched, affine_small, Z, prompt, keep=11)


def test_edit_reconstructs_with_null_prompt(sched):
    d = AffineDenoiser((3, 16, 16), 50)
    v = synth_video(default_corpus()[0])
    out = edit(sched, d, v, null_prompt())
    ref = decode(encode(v))
    assert np.linalg.norm(out - ref) / np.linalg.norm(ref) < 5e-2


def test_edit_determinism_and_prompt_sensitivity(sched):
    d = AffineDenoiser((3, 16, 16), 50)
    v = synth_video(default_corpus()[1])
    a = edit(sched, d, v, PromptEmbedding.from_label("a red car"))
    b = edit(sched, d, v, PromptEmbedding.from_label("a red car"))
    c = edit(sched, d, v, PromptEmbedding.from_label("a snowy street"))
    assert np.array_equal(a, b)
    assert np.linalg.norm(a - c) > 0


@given(arrays(np.float64, (3, 3, 4, 4), elements=st.floats(-3, 3)))
def test_zero_denoiser_round_trip_property(z):
    sched = make_schedule(10)
    d = AffineDenoiser.zero(SMALL, 10)
    c = null_prompt()
    back = sample_final(sched, d, ddim_invert(sched, d, z, c), c)
    assert np.allclose(back, z, rtol=1e-9, atol=1e-12)
