"""Conditional generative models: CVAE, CGAN and a small DDPM.

All three share one contract so the federation code never needs to know the
family: ``train_step(x, y, rng)``, ``sample(labels, rng)``, and a flat
parameter view (``get_flat`` / ``set_flat``) for averaging.

Samples live in the same space as the training data. When the data carries a
``value_range`` (images), GAN and DDPM work internally on ``[-1, 1]`` and
samples are mapped back and clamped; feature-space models pass
``value_range=None`` and are left unclamped.
"""

from __future__ import annotations

import copy
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, NumericError, UsageError
from .nn import Adam, bce_with_logits, mlp, one_hot

# default Adam learning rates per family
DEFAULT_LR = {"cvae": 1e-3, "cgan": 2e-4, "cddpm": 1e-4}
FAMILIES = tuple(DEFAULT_LR)


def _finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NumericError(f"non-finite {what}")
    return value


class GenerativeModel:
    family = ""

    def __init__(self, num_classes: int, sample_dim: int,
                 value_range: tuple[float, float] | None = None):
        self.num_classes = int(num_classes)
        self.sample_dim = int(sample_dim)
        self.value_range = tuple(value_range) if value_range is not None else None

    # flat view over every network, in a fixed order
    def networks(self) -> list:
        raise NotImplementedError

    @property
    def param_count(self) -> int:
        return sum(n.param_count for n in self.networks())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([n.flatten_params() for n in self.networks()])

    def set_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for net in self.networks():
            net.unflatten_params(flat[pos:pos + net.param_count])
            pos += net.param_count
        if pos != flat.size:
            raise DomainError(f"expected {pos} parameters, got {flat.size}")

    def optimizers(self) -> list:
        raise NotImplementedError

    def reset_optimizer(self) -> None:
        for opt in self.optimizers():
            opt.reset()

    def set_lr(self, lr: float) -> None:
        for opt in self.optimizers():
            opt.lr = lr

    def copy(self) -> "GenerativeModel":
        return copy.deepcopy(self)

    def header(self) -> dict:
        raise NotImplementedError

    def _check_labels(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DomainError(f"labels must lie in [0, {self.num_classes})")
        return labels

    def _to_unit(self, x: np.ndarray) -> np.ndarray:
        if self.value_range is None:
            return x
        lo, hi = self.value_range
        return 2.0 * (x - lo) / (hi - lo) - 1.0

    def _from_unit(self, u: np.ndarray) -> np.ndarray:
        if self.value_range is None:
            return u
        lo, hi = self.value_range
        return np.clip(lo + (u + 1.0) * 0.5 * (hi - lo), lo, hi)

    def train_step(self, x: np.ndarray, y: np.ndarray, rng: np.random.Generator):
        raise NotImplementedError

    def sample(self, labels, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """Per-row KL( N(mu, exp(logvar)) || N(0, I) )."""
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar, axis=1)


class CVAE(GenerativeModel):
    """Conditional VAE; labels enter encoder and decoder as one-hot columns."""

    family = "cvae"

    def __init__(self, num_classes: int, sample_dim: int, latent_dim: int = 16,
                 hidden: Sequence[int] = (64,), value_range=None,
                 rng: np.random.Generator | None = None, lr: float | None = None,
                 weight_decay: float = 1e-3):
        super().__init__(num_classes, sample_dim, value_range)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.latent_dim = latent_dim
        self.hidden = tuple(hidden)
        self.encoder = mlp([sample_dim + num_classes, *self.hidden, 2 * latent_dim], rng=rng)
        self.decoder = mlp([latent_dim + num_classes, *self.hidden[::-1], sample_dim], rng=rng)
        self.opt = Adam(lr if lr is not None else DEFAULT_LR["cvae"], weight_decay=weight_decay)

    def networks(self):
        return [self.encoder, self.decoder]

    def optimizers(self):
        return [self.opt]

    def header(self):
        return {"family": self.family, "num_classes": self.num_classes,
                "sample_dim": self.sample_dim, "latent_dim": self.latent_dim,
                "hidden": list(self.hidden), "value_range": self.value_range}

    def encode(self, x, y):
        out = self.encoder(np.hstack([x, one_hot(y, self.num_classes)]))
        return out[:, :self.latent_dim], out[:, self.latent_dim:]

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray,
                      eps: np.ndarray) -> tuple[float, np.ndarray]:
        """Negative ELBO (summed-squared reconstruction + KL), averaged over the batch.

        ``eps`` is the reparameterization noise, passed in so the loss is a
        deterministic function of the parameters.
        """
        b, l = x.shape[0], self.latent_dim
        if b == 0:
            raise DomainError("empty batch")
        oh = one_hot(y, self.num_classes)
        enc_out, enc_cache = self.encoder.forward_cache(np.hstack([x, oh]))
        mu, logvar = enc_out[:, :l], enc_out[:, l:]
        std = np.exp(0.5 * logvar)
        z = mu + std * eps
        recon, dec_cache = self.decoder.forward_cache(np.hstack([z, oh]))
        resid = recon - x
        loss = float(np.sum(resid * resid) / b + np.sum(gaussian_kl(mu, logvar)) / b)
        _finite(loss, "cvae loss")
        g_dec, g_in = self.decoder.backward(dec_cache, 2.0 * resid / b)
        dz = g_in[:, :l]
        dmu = dz + mu / b
        dlogvar = dz * eps * 0.5 * std + 0.5 * (np.exp(logvar) - 1.0) / b
        g_enc, _ = self.encoder.backward(enc_cache, np.hstack([dmu, dlogvar]))
        return loss, np.concatenate([g_enc, g_dec])

    def train_step(self, x, y, rng):
        eps = rng.standard_normal((x.shape[0], self.latent_dim))
        loss, grad = self.loss_and_grad(x, self._check_labels(y), eps)
        self.set_flat(self.opt.step(self.get_flat(), grad))
        return loss

    def sample(self, labels, rng):
        labels = self._check_labels(labels)
        z = rng.standard_normal((labels.size, self.latent_dim))
        out = self.decoder(np.hstack([z, one_hot(labels, self.num_classes)]))
        if self.value_range is not None:
            out = np.clip(out, *self.value_range)
        return out


class CGAN(GenerativeModel):
    """Conditional GAN with the non-saturating generator loss."""

    family = "cgan"

    def __init__(self, num_classes: int, sample_dim: int, latent_dim: int = 16,
                 hidden: Sequence[int] = (64,), value_range=None,
                 rng: np.random.Generator | None = None, lr: float | None = None,
                 b1: float = 0.5, b2: float = 0.999):
        super().__init__(num_classes, sample_dim, value_range)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.latent_dim = latent_dim
        self.hidden = tuple(hidden)
        out_act = "tanh" if value_range is not None else None
        self.generator = mlp([latent_dim + num_classes, *self.hidden, sample_dim],
                             activation="relu", out_activation=out_act, rng=rng)
        self.discriminator = mlp([sample_dim + num_classes, *self.hidden[::-1], 1],
                                 activation="leaky_relu", rng=rng)
        lr = lr if lr is not None else DEFAULT_LR["cgan"]
        self.opt_g = Adam(lr, b1, b2)
        self.opt_d = Adam(lr, b1, b2)

    def networks(self):
        return [self.generator, self.discriminator]

    def optimizers(self):
        return [self.opt_g, self.opt_d]

    def header(self):
        return {"family": self.family, "num_classes": self.num_classes,
                "sample_dim": self.sample_dim, "latent_dim": self.latent_dim,
                "hidden": list(self.hidden), "value_range": self.value_range}

    def discriminate(self, x, y) -> np.ndarray:
        """Raw discriminator scores for data-space inputs."""
        oh = one_hot(self._check_labels(y), self.num_classes)
        return self.discriminator(np.hstack([self._to_unit(x), oh]))[:, 0]

    def train_step(self, x, y, rng):
        """One discriminator step then one generator step; returns ``(loss_d, loss_g)``."""
        y = self._check_labels(y)
        b = x.shape[0]
        if b == 0:
            raise DomainError("empty batch")
        oh = one_hot(y, self.num_classes)
        z = rng.standard_normal((b, self.latent_dim))
        g_in = np.hstack([z, oh])
        fake, g_cache = self.generator.forward_cache(g_in)

        real_logit, r_cache = self.discriminator.forward_cache(np.hstack([self._to_unit(x), oh]))
        fake_logit, f_cache = self.discriminator.forward_cache(np.hstack([fake, oh]))
        loss_real, d_real = bce_with_logits(real_logit, np.ones(b))
        loss_fake, d_fake = bce_with_logits(fake_logit, np.zeros(b))
        grad_d = (self.discriminator.backward(r_cache, d_real)[0]
                  + self.discriminator.backward(f_cache, d_fake)[0])
        self.discriminator.unflatten_params(
            self.opt_d.step(self.discriminator.flatten_params(), grad_d))

        fake_logit, f_cache = self.discriminator.forward_cache(np.hstack([fake, oh]))
        loss_g, d_gen = bce_with_logits(fake_logit, np.ones(b))
        _, d_input = self.discriminator.backward(f_cache, d_gen)
        grad_g, _ = self.generator.backward(g_cache, d_input[:, :self.sample_dim])
        self.generator.unflatten_params(self.opt_g.step(self.generator.flatten_params(), grad_g))
        loss_d = loss_real + loss_fake
        return _finite(loss_d, "discriminator loss"), _finite(loss_g, "generator loss")

    def sample(self, labels, rng):
        labels = self._check_labels(labels)
        z = rng.standard_normal((labels.size, self.latent_dim))
        return self._from_unit(self.generator(np.hstack([z, one_hot(labels, self.num_classes)])))


def linear_betas(steps: int, start: float | None = None, end: float | None = None) -> np.ndarray:
    """Linear variance schedule.

    Without explicit endpoints the classic (1e-4, 0.02) pair is rescaled by
    ``1000 / steps`` so short chains still end close to pure noise.
    """
    if steps < 1:
        raise DomainError("a diffusion schedule needs at least one step")
    scale = 1000.0 / steps
    start = 1e-4 * scale if start is None else start
    end = min(0.02 * scale, 0.999) if end is None else end
    betas = np.linspace(start, end, steps)
    if np.any(betas <= 0) or np.any(betas >= 1):
        raise DomainError("betas must lie strictly inside (0, 1)")
    return betas


def ddpm_forward_noise(x0: np.ndarray, t, betas: np.ndarray, rng: np.random.Generator | None = None,
                       eps: np.ndarray | None = None) -> np.ndarray:
    """Closed-form draw from q(x_t | x_0); ``t`` is 1-based (scalar or per-row)."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > betas.size):
        raise DomainError(f"t must lie in [1, {betas.size}]")
    abar = np.cumprod(1.0 - betas)[t_arr - 1]
    if eps is None:
        eps = rng.standard_normal(np.shape(x0))
    if abar.ndim:
        abar = abar[:, None]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def guided_epsilon(eps_cond: np.ndarray, eps_uncond: np.ndarray, w: float) -> np.ndarray:
    return (1.0 + w) * eps_cond - w * eps_uncond


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps."""
    half = dim // 2
    freqs = np.exp(-np.log(1000.0) * np.arange(half) / max(half - 1, 1))
    ang = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.hstack([np.sin(ang), np.cos(ang)])


class CDDPM(GenerativeModel):
    """Epsilon-predicting diffusion model with classifier-free guidance.

    Label slot ``num_classes`` is the null label used for unconditional
    training (label dropout) and for the unconditional branch of guidance.
    """

    family = "cddpm"

    def __init__(self, num_classes: int, sample_dim: int, steps: int = 100,
                 hidden: Sequence[int] = (128, 128), value_range=None,
                 rng: np.random.Generator | None = None, lr: float | None = None,
                 uncond_drop_prob: float = 0.1, time_dim: int = 16,
                 beta_start: float | None = None, beta_end: float | None = None,
                 guidance: float = 0.0):
        super().__init__(num_classes, sample_dim, value_range)
        rng = rng if rng is not None else np.random.default_rng(0)
        if not 0 <= uncond_drop_prob < 1:
            raise ConfigError("uncond_drop_prob must lie in [0, 1)")
        self.steps = steps
        self.hidden = tuple(hidden)
        self.time_dim = time_dim
        self.uncond_drop_prob = uncond_drop_prob
        self.betas = linear_betas(steps, beta_start, beta_end)
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.cumprod(self.alphas)
        self.guidance = guidance
        self.denoiser = mlp([sample_dim + time_dim + num_classes + 1, *self.hidden, sample_dim],
                            activation="relu", rng=rng)
        self.opt = Adam(lr if lr is not None else DEFAULT_LR["cddpm"])

    def networks(self):
        return [self.denoiser]

    def optimizers(self):
        return [self.opt]

    def header(self):
        return {"family": self.family, "num_classes": self.num_classes,
                "sample_dim": self.sample_dim, "steps": self.steps,
                "hidden": list(self.hidden), "value_range": self.value_range,
                "uncond_drop_prob": self.uncond_drop_prob, "time_dim": self.time_dim,
                "beta_start": float(self.betas[0]), "beta_end": float(self.betas[-1]),
                "guidance": self.guidance}

    def _inputs(self, x_t, t, label_idx):
        return np.hstack([x_t, time_embedding(t, self.time_dim),
                          one_hot(label_idx, self.num_classes + 1)])

    def predict_eps(self, x_t: np.ndarray, t, labels) -> np.ndarray:
        """Denoiser output; ``labels`` may contain the null index ``num_classes``."""
        t = np.broadcast_to(np.asarray(t), (x_t.shape[0],))
        return self.denoiser(self._inputs(x_t, t, np.asarray(labels)))

    def forward_noise(self, x0, t, rng=None, eps=None):
        return ddpm_forward_noise(x0, t, self.betas, rng, eps)

    def train_step(self, x, y, rng):
        y = self._check_labels(y)
        b = x.shape[0]
        if b == 0:
            raise DomainError("empty batch")
        x0 = self._to_unit(x)
        t = rng.integers(1, self.steps + 1, size=b)
        eps = rng.standard_normal(x0.shape)
        x_t = ddpm_forward_noise(x0, t, self.betas, eps=eps)
        drop = rng.random(b) < self.uncond_drop_prob
        label_idx = np.where(drop, self.num_classes, y)
        pred, cache = self.denoiser.forward_cache(self._inputs(x_t, t, label_idx))
        resid = pred - eps
        loss = _finite(float(np.sum(resid * resid) / b), "diffusion loss")
        grad, _ = self.denoiser.backward(cache, 2.0 * resid / b)
        self.denoiser.unflatten_params(self.opt.step(self.denoiser.flatten_params(), grad))
        return loss

    def sample(self, labels, rng, guidance: float | None = None):
        """Ancestral sampling from t = T down to 1 with guided noise estimates."""
        w = self.guidance if guidance is None else float(guidance)
        if not np.isfinite(w) or w < 0:
            raise ConfigError("guidance weight must be finite and non-negative")
        if w > 0 and self.uncond_drop_prob == 0:
            raise ConfigError("guidance > 0 needs a model trained with uncond_drop_prob > 0")
        labels = self._check_labels(labels)
        n = labels.size
        null = np.full(n, self.num_classes)
        x = rng.standard_normal((n, self.sample_dim))
        for t in range(self.steps, 0, -1):
            eps = self.predict_eps(x, t, labels)
            if w != 0:
                eps = guided_epsilon(eps, self.predict_eps(x, t, null), w)
            beta, abar = self.betas[t - 1], self.alpha_bar[t - 1]
            x = (x - beta / np.sqrt(1.0 - abar) * eps) / np.sqrt(self.alphas[t - 1])
            if t > 1:
                x = x + np.sqrt(beta) * rng.standard_normal(x.shape)
        return self._from_unit(x)


def build_generative(family: str, num_classes: int, sample_dim: int,
                     rng: np.random.Generator | None = None, **kwargs) -> GenerativeModel:
    """Construct a model by family name; ``kwargs`` go to the family constructor."""
    kwargs = {k: v for k, v in kwargs.items() if v is not None}
    if family == "cvae":
        allowed = {"latent_dim", "hidden", "value_range", "lr", "weight_decay"}
        cls = CVAE
    elif family == "cgan":
        allowed = {"latent_dim", "hidden", "value_range", "lr", "b1", "b2"}
        cls = CGAN
    elif family == "cddpm":
        allowed = {"steps", "hidden", "value_range", "lr", "uncond_drop_prob", "time_dim",
                   "beta_start", "beta_end", "guidance"}
        cls = CDDPM
    else:
        raise UsageError(f"unknown generative family {family!r}")
    return cls(num_classes, sample_dim, rng=rng, **{k: v for k, v in kwargs.items() if k in allowed})
