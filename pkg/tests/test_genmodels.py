import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import conditional_only_sampler

from gefl.datasets import blob_centers, make_blobs, make_glyphs
from gefl.errors import ConfigError, DomainError, UsageError
from gefl.genmodels import (CDDPM, CGAN, CVAE, build_generative, ddpm_forward_noise, gaussian_kl,
                            guided_epsilon, linear_betas)
from gefl.nn import bce_with_logits


def smoothed(values, width=20):
    v = np.asarray(values)
    return np.convolve(v, np.ones(width) / width, mode="valid")


# cvae ------------------------------------------------------------------


def test_kl_closed_forms():
    assert gaussian_kl(np.zeros((1, 3)), np.zeros((1, 3)))[0] == 0.0
    assert gaussian_kl(np.ones((1, 3)), np.zeros((1, 3)))[0] == pytest.approx(1.5)


def test_cvae_shapes():
    m = CVAE(3, 5, latent_dim=4, hidden=(7,))
    assert m.encoder.out_dim == 8 and m.decoder.in_dim == 4 + 3
    assert m.sample(np.array([0, 1, 2, 2]), np.random.default_rng(0)).shape == (4, 5)


def test_cvae_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    m = CVAE(3, 4, latent_dim=2, hidden=(5,), rng=rng)
    x, y = rng.standard_normal((6, 4)), rng.integers(0, 3, 6)
    eps = rng.standard_normal((6, 2))
    _, grad = m.loss_and_grad(x, y, eps)
    flat = m.get_flat()
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        for sign in (1, -1):
            p = flat.copy()
            p[i] += sign * 1e-6
            m.set_flat(p)
            fd[i] += sign * m.loss_and_grad(x, y, eps)[0] / 2e-6
    m.set_flat(flat)
    assert np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-4)) < 1e-4


def test_cvae_loss_decreases_on_blobs():
    ds = make_blobs(2, 4, 100, 0.5, seed=0)
    m = CVAE(2, 4, rng=np.random.default_rng(0))
    rng = np.random.default_rng(1)
    losses = [m.train_step(ds.inputs[i], ds.labels[i], rng)
              for i in (rng.choice(len(ds), 32) for _ in range(200))]
    s = smoothed(losses)
    assert s[-1] < 0.5 * s[0]


def test_cvae_samples_near_class_centers_after_training():
    spread = 0.5
    ds = make_blobs(2, 4, 200, spread, seed=0)
    m = CVAE(2, 4, rng=np.random.default_rng(0), lr=3e-3)
    rng = np.random.default_rng(1)
    for _ in range(1500):
        i = rng.choice(len(ds), 64)
        m.train_step(ds.inputs[i], ds.labels[i], rng)
    centers = blob_centers(2, 4)
    for c in range(2):
        mean = m.sample(np.full(500, c), rng).mean(axis=0)
        assert np.linalg.norm(mean - centers[c]) < 3 * spread


def test_sampling_is_deterministic_for_every_family():
    y = np.array([0, 1, 1, 0])
    for family in ("cvae", "cgan", "cddpm"):
        m = build_generative(family, 2, 3, rng=np.random.default_rng(0), steps=10)
        a = m.sample(y, np.random.default_rng(7))
        b = m.sample(y, np.random.default_rng(7))
        assert a.shape == (4, 3) and a.tobytes() == b.tobytes()


def test_label_out_of_range_raises():
    for family in ("cvae", "cgan", "cddpm"):
        m = build_generative(family, 2, 3, steps=5)
        with pytest.raises(DomainError):
            m.sample(np.array([2]), np.random.default_rng(0))


def test_unknown_family_is_a_usage_error():
    with pytest.raises(UsageError):
        build_generative("flow", 2, 3)


def test_default_learning_rates():
    assert CVAE(2, 3).opt.lr == 1e-3 and CVAE(2, 3).opt.weight_decay == 1e-3
    g = CGAN(2, 3)
    assert all(o.lr == 2e-4 and (o.b1, o.b2) == (0.5, 0.999) for o in g.optimizers())
    assert CDDPM(2, 3).opt.lr == 1e-4 and CDDPM(2, 3).steps == 100


def test_bounded_outputs_respect_value_range():
    rng = np.random.default_rng(0)
    for family in ("cvae", "cgan", "cddpm"):
        m = build_generative(family, 2, 6, rng=rng, value_range=(0.0, 1.0), steps=10)
        x = m.sample(rng.integers(0, 2, 50), rng)
        assert x.min() >= 0.0 and x.max() <= 1.0


# cgan ------------------------------------------------------------------


def test_discriminator_at_zero_output_gives_ln2_per_term():
    g = CGAN(2, 3, rng=np.random.default_rng(0))
    W, b = g.discriminator.params[-1]
    g.discriminator.params[-1] = (np.zeros_like(W), np.zeros_like(b))
    logits = g.discriminate(np.ones((4, 3)), np.array([0, 1, 0, 1])).reshape(-1, 1)
    assert np.all(logits == 0.0)
    assert bce_with_logits(logits, np.ones(4))[0] == pytest.approx(np.log(2))
    assert bce_with_logits(logits, np.zeros(4))[0] == pytest.approx(np.log(2))


def test_confident_correct_discriminator_loss_vanishes():
    real = bce_with_logits(np.full((4, 1), 40.0), np.ones(4))[0]
    fake = bce_with_logits(np.full((4, 1), -40.0), np.zeros(4))[0]
    assert real + fake < 1e-15


def test_cgan_discriminator_drifts_to_chance_and_classes_separate():
    ds = make_blobs(2, 2, 500, 0.3, seed=0)
    held = make_blobs(2, 2, 200, 0.3, seed=1)
    g = CGAN(2, 2, hidden=(32,), rng=np.random.default_rng(0), lr=1e-3)
    rng = np.random.default_rng(1)
    accs = []
    for step in range(2000):
        i = rng.choice(len(ds), 64)
        g.train_step(ds.inputs[i], ds.labels[i], rng)
        if step >= 1000 and step % 50 == 0:
            fake = g.sample(held.labels, rng)
            hits = (g.discriminate(held.inputs, held.labels) > 0).sum() + \
                (g.discriminate(fake, held.labels) < 0).sum()
            accs.append(hits / (2 * len(held)))
    # adversarial training oscillates, so judge the time-averaged accuracy
    assert abs(np.mean(accs) - 0.5) <= 0.15
    m0, m1 = (g.sample(np.full(300, c), rng).mean(0) for c in (0, 1))
    assert np.linalg.norm(m0 - m1) > 3.0


def test_cgan_train_step_returns_both_losses():
    g = CGAN(2, 3, rng=np.random.default_rng(0))
    out = g.train_step(np.ones((5, 3)), np.array([0, 1, 0, 1, 1]), np.random.default_rng(0))
    assert len(out) == 2 and all(np.isfinite(out))


# diffusion -------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(steps=st.integers(1, 1000))
def test_schedule_bounds_and_monotone_alpha_bar(steps):
    betas = linear_betas(steps)
    assert betas.size == steps and np.all((betas > 0) & (betas < 1))
    abar = np.cumprod(1 - betas)
    assert np.all(np.diff(abar) < 0)


def test_default_schedule_ends_near_pure_noise_at_100_steps():
    assert np.prod(1 - linear_betas(100)) < 1e-3
    np.testing.assert_allclose(linear_betas(1000)[[0, -1]], [1e-4, 0.02])


def test_forward_noise_closed_forms():
    x0 = np.array([[1.0, -2.0, 0.5]])
    betas = linear_betas(50)
    abar = np.cumprod(1 - betas)
    out = ddpm_forward_noise(x0, 10, betas, eps=np.zeros_like(x0))
    np.testing.assert_array_equal(out, np.sqrt(abar[9]) * x0)
    tiny = np.full(5, 1e-300)
    # alpha_bar rounds to exactly 1, so even unit noise leaves x0 untouched
    np.testing.assert_array_equal(ddpm_forward_noise(x0, 5, tiny, eps=np.ones_like(x0)), x0)
    with pytest.raises(DomainError):
        ddpm_forward_noise(x0, 0, betas, eps=np.zeros_like(x0))
    with pytest.raises(DomainError):
        ddpm_forward_noise(x0, 51, betas, eps=np.zeros_like(x0))


def test_forward_noise_variance_monte_carlo():
    betas = linear_betas(100)
    abar = np.cumprod(1 - betas)
    rng = np.random.default_rng(0)
    x0 = np.tile(np.array([[0.3, -1.0, 2.0]]), (10_000, 1))
    for t in (1, 30, 100):
        resid = ddpm_forward_noise(x0, t, betas, rng) - np.sqrt(abar[t - 1]) * x0
        np.testing.assert_allclose(resid.var(axis=0), 1 - abar[t - 1], rtol=0.05)


def test_zero_denoiser_loss_is_expected_noise_energy():
    m = CDDPM(2, 6, steps=20, hidden=(8,), rng=np.random.default_rng(0))
    for W, b in m.denoiser.params:
        W[:] = 0.0
        b[:] = 0.0
    x, y = np.random.default_rng(1).standard_normal((4000, 6)), np.zeros(4000, dtype=int)
    assert m.train_step(x, y, np.random.default_rng(2)) == pytest.approx(6, rel=0.05)


def test_perfect_denoiser_has_zero_loss(monkeypatch):
    m = CDDPM(2, 3, steps=10, hidden=(4,), rng=np.random.default_rng(0))
    x, y = np.random.default_rng(1).standard_normal((5, 3)), np.array([0, 1, 1, 0, 1])
    # replay the training draws to learn the noise the step will use
    replay = np.random.default_rng(2)
    replay.integers(1, m.steps + 1, size=5)
    eps = replay.standard_normal((5, 3))
    monkeypatch.setattr(m.denoiser, "forward_cache", lambda inp: (eps.copy(), None))
    monkeypatch.setattr(m.denoiser, "backward", lambda cache, g: (np.zeros(m.param_count), None))
    assert m.train_step(x, y, np.random.default_rng(2)) == 0.0


def test_diffusion_loss_decreases_on_glyphs():
    ds = make_glyphs(4, 8, 100, 0.1, 0, seed=0)
    m = CDDPM(4, 64, steps=50, hidden=(64, 64), rng=np.random.default_rng(0), lr=1e-3,
              value_range=(0.0, 1.0))
    rng = np.random.default_rng(1)
    losses = [m.train_step(ds.inputs[i], ds.labels[i], rng)
              for i in (rng.choice(len(ds), 64) for _ in range(500))]
    s = smoothed(losses, 50)
    assert s[-1] < 0.7 * s[0]


def test_guidance_arithmetic():
    assert guided_epsilon(np.array([1.0]), np.array([0.0]), 2.0)[0] == 3.0
    e = np.random.default_rng(0).standard_normal(5)
    for w in (0.0, 0.5, 4.0):
        np.testing.assert_allclose(guided_epsilon(e, e, w), e, rtol=0, atol=1e-15)
    assert guided_epsilon(e, -e, 0.0).tobytes() == e.tobytes()


def test_zero_guidance_is_pure_conditional_sampling_bitwise():
    m = CDDPM(3, 4, steps=15, hidden=(16,), rng=np.random.default_rng(0))
    y = np.array([0, 1, 2, 1])
    a = m.sample(y, np.random.default_rng(5), guidance=0.0)
    b = conditional_only_sampler(m, y, np.random.default_rng(5))
    assert a.tobytes() == b.tobytes()


def test_guidance_requires_unconditional_training():
    m = CDDPM(2, 3, steps=5, uncond_drop_prob=0.0)
    m.sample(np.array([0]), np.random.default_rng(0), guidance=0.0)
    with pytest.raises(ConfigError):
        m.sample(np.array([0]), np.random.default_rng(0), guidance=1.0)


def test_flat_round_trip_and_copy_independence():
    for family in ("cvae", "cgan", "cddpm"):
        m = build_generative(family, 2, 3, rng=np.random.default_rng(0), steps=5)
        flat = m.get_flat()
        c = m.copy()
        c.set_flat(flat + 1.0)
        assert m.get_flat().tobytes() == flat.tobytes()
        assert c.param_count == m.param_count == flat.size
