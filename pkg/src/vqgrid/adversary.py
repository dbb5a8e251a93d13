"""Patch-based discriminator and the alternating adversarial training step.

The generator side minimizes the quantization objective plus an adaptively
weighted non-saturating adversarial term; the discriminator side maximizes
real/fake separation on per-patch logits. The adaptive weight balances the
gradient norms of both terms at the decoder's final convolution.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .codec import Codec, reconstruct
from .errors import NumericError
from .layers import Conv2d, GroupNorm, Layer, collect
from .optim import Adam
from .quantizer import vq_loss
from .tensor import Tensor, backward

DELTA = 1e-6  # numerical-stability floor in the adaptive weight


@dataclass
class AdversaryConfig:
    disc_start: int = 1000
    beta: float = 0.25
    lambda_max: float = 1e4
    saturating: bool = False  # switch to the +log(1 - D(x_hat)) generator form
    base_channels: int = 32
    seed: int = 0

    def to_mapping(self) -> dict:
        return {"disc_start": self.disc_start, "beta": self.beta,
                "lambda_max": self.lambda_max, "saturating": self.saturating,
                "base_channels": self.base_channels, "seed": self.seed}

    @classmethod
    def from_mapping(cls, d: dict) -> "AdversaryConfig":
        return cls(**dict(d))


class PatchDiscriminator(Layer):
    """Conv stack emitting one real/fake logit per image patch.

    Three stride-2 layers with channel doubling (feature normalization from
    layer 2) and a stride-1 output conv: a 64x64 input yields an 8x8 logit
    grid with a ~38 px receptive field.
    """

    def __init__(self, base_channels: int = 32, seed: int = 0):
        rng = np.random.default_rng(seed)
        c = base_channels
        self.conv1 = Conv2d(3, c, 4, rng, stride=2, pad=1)
        self.conv2 = Conv2d(c, 2 * c, 4, rng, stride=2, pad=1)
        self.norm2 = GroupNorm(2 * c)
        self.conv3 = Conv2d(2 * c, 4 * c, 4, rng, stride=2, pad=1)
        self.norm3 = GroupNorm(4 * c)
        self.out = Conv2d(4 * c, 1, 3, rng, pad=1)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.silu(self.conv1(x))
        h = T.silu(self.norm2(self.conv2(h)))
        h = T.silu(self.norm3(self.conv3(h)))
        return self.out(h)

    def named_params(self):
        return collect({"conv1": self.conv1, "conv2": self.conv2, "norm2": self.norm2,
                        "conv3": self.conv3, "norm3": self.norm3, "out": self.out})


def discriminate(x: Tensor, d: PatchDiscriminator) -> Tensor:
    """Raw per-patch logits (B, 1, p, q); losses apply the sigmoid."""
    return d(x)


def gan_losses(real_logits: Tensor, fake_logits: Tensor,
               saturating: bool = False) -> tuple[Tensor, Tensor]:
    """Discriminator loss and the generator's adversarial term.

    d_loss = -mean log D(x) - mean log(1 - D(x_hat)) expressed through
    softplus identities; the generator term defaults to the non-saturating
    -mean log D(x_hat).
    """
    if not (np.isfinite(real_logits.data).all() and np.isfinite(fake_logits.data).all()):
        raise NumericError("discriminator logits must be finite")
    d_loss = T.softplus(-real_logits).mean() + T.softplus(fake_logits).mean()
    if saturating:
        g_loss_adv = -T.softplus(fake_logits).mean()
    else:
        g_loss_adv = T.softplus(-fake_logits).mean()
    return d_loss, g_loss_adv


def adaptive_weight(rec_grad_norm: float, gan_grad_norm: float,
                    lambda_max: float = 1e4) -> float:
    """Ratio of reconstruction to adversarial gradient norms, clamped."""
    if not (np.isfinite(rec_grad_norm) and np.isfinite(gan_grad_norm)):
        raise NumericError(
            f"gradient norms must be finite, got ({rec_grad_norm}, {gan_grad_norm})")
    if rec_grad_norm < 0 or gan_grad_norm < 0:
        raise NumericError("gradient norms must be >= 0")
    lam = rec_grad_norm / (gan_grad_norm + DELTA)
    return float(min(max(lam, 0.0), lambda_max))


@dataclass
class GanStepReport:
    step: int
    g_loss: float
    d_loss: float
    lambda_: float
    rec_loss: float
    codebook_loss: float
    commitment_loss: float
    disc_active: bool


def train_step(batch: Tensor, codec: Codec, disc: PatchDiscriminator,
               g_opt: Adam, d_opt: Adam, step: int,
               cfg: AdversaryConfig) -> GanStepReport:
    """One alternating update: generator side first, then the discriminator.

    The adversarial machinery engages once ``step`` reaches ``disc_start``;
    lambda is computed and reported either way (gradient norms flow only
    through the short path between each loss and the decoder's last layer).
    """
    x_hat, q = reconstruct(batch, codec)
    rec = codec.rec_loss(batch, x_hat)
    fake_logits = discriminate(x_hat, disc)
    if cfg.saturating:
        g_adv = -T.softplus(fake_logits).mean()
    else:
        g_adv = T.softplus(-fake_logits).mean()

    w_last = codec.decoder.last_layer_weight
    try:
        n_rec = float(np.sqrt((T.grad_wrt(rec, w_last) ** 2).sum()))
        n_gan = float(np.sqrt((T.grad_wrt(g_adv, w_last) ** 2).sum()))
        lam = adaptive_weight(n_rec, n_gan, cfg.lambda_max)
        lam_ok = True
    except NumericError:
        warnings.warn("non-finite gradient norms; skipping adversarial term this step")
        lam, lam_ok = 0.0, False

    disc_active = lam_ok and step >= cfg.disc_start
    g_loss = vq_loss(batch, x_hat, q, beta=cfg.beta, rec_loss=lambda a, b: rec)
    if disc_active:
        g_loss = g_loss + lam * g_adv

    g_opt.zero_grad()
    d_opt.zero_grad()
    backward(g_loss)
    g_opt.step()
    g_opt.zero_grad()

    # discriminator phase: the generator's output is a constant here, and
    # the update waits out the same warmup as the adversarial term
    if disc_active:
        real_logits = discriminate(batch, disc)
        fake_detached = discriminate(x_hat.detach(), disc)
        d_loss, _ = gan_losses(real_logits, fake_detached)
        d_opt.zero_grad()
        backward(d_loss)
        d_opt.step()
        d_opt.zero_grad()
        d_loss_value = float(d_loss.data)
    else:
        with T.no_grad():
            real_logits = discriminate(batch, disc)
            fake_detached = discriminate(x_hat.detach(), disc)
            d_loss, _ = gan_losses(real_logits, fake_detached)
        d_loss_value = float(d_loss.data)

    return GanStepReport(
        step=step, g_loss=float(g_loss.data), d_loss=d_loss_value, lambda_=lam,
        rec_loss=float(rec.data), codebook_loss=float(q.codebook_loss.data),
        commitment_loss=float(q.commitment_loss.data), disc_active=disc_active)
