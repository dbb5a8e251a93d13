"""Convolutional encoder/decoder pair around the discrete bottleneck.

The encoder halves the spatial side ``m`` times (downsampling factor
f = 2^m); the decoder mirrors it with nearest-neighbor upsampling. A single
self-attention layer sits at the lowest resolution of both halves. Outputs
are bounded to [-1, 1]; inputs are expected in the same range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import Conv2d, GroupNorm, Layer, collect
from .quantizer import Codebook, QuantizationResult, quantize, straight_through
from .tensor import Tensor

REC_LOSS_KINDS = ("squared_error", "abs_error", "feature_proxy")


@dataclass
class CodecConfig:
    m: int = 2
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = ()
    n_z: int = 16
    K: int = 256
    image_size: int = 32
    rec_loss_kind: str = "abs_error"
    use_attention: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.m < 0:
            raise ConfigError(f"m must be >= 0, got {self.m}")
        if not self.channel_multipliers:
            self.channel_multipliers = tuple(min(2 ** i, 8) for i in range(self.m + 1))
        self.channel_multipliers = tuple(int(c) for c in self.channel_multipliers)
        if len(self.channel_multipliers) != self.m + 1:
            raise ConfigError(
                f"need {self.m + 1} channel multipliers for m={self.m}, "
                f"got {len(self.channel_multipliers)}")
        if self.image_size % (1 << self.m) != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by 2^m = {1 << self.m}")
        if self.image_size >> self.m < 1:
            raise ConfigError("latent side must be >= 1")
        if self.rec_loss_kind not in REC_LOSS_KINDS:
            raise ConfigError(
                f"rec_loss_kind {self.rec_loss_kind!r} not one of {REC_LOSS_KINDS}")

    @property
    def f(self) -> int:
        return 1 << self.m

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * c for c in self.channel_multipliers)

    def to_mapping(self) -> dict:
        return {
            "m": self.m, "base_channels": self.base_channels,
            "channel_multipliers": list(self.channel_multipliers),
            "n_z": self.n_z, "K": self.K, "image_size": self.image_size,
            "rec_loss_kind": self.rec_loss_kind, "use_attention": self.use_attention,
            "seed": self.seed,
        }

    @classmethod
    def from_mapping(cls, d: dict) -> "CodecConfig":
        d = dict(d)
        if "channel_multipliers" in d:
            d["channel_multipliers"] = tuple(d["channel_multipliers"])
        return cls(**d)


class ResBlock(Layer):
    """conv3x3 -> group feature norm -> silu -> conv3x3, additive skip."""

    def __init__(self, c_in: int, c_out: int, rng):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, pad=1)
        self.norm = GroupNorm(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, pad=1)
        self.skip = Conv2d(c_in, c_out, 1, rng) if c_in != c_out else None

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv2(T.silu(self.norm(self.conv1(x))))
        s = self.skip(x) if self.skip is not None else x
        return h + s

    def named_params(self):
        children = {"conv1": self.conv1, "norm": self.norm, "conv2": self.conv2}
        if self.skip is not None:
            children["skip"] = self.skip
        return collect(children)

    # spatial extent of the block: two 3x3 convs in sequence
    spatial_specs = ((3, 1, 1), (3, 1, 1))


class AttentionBlock(Layer):
    """Single-layer self-attention over all spatial positions, residual added.

    The output projection starts at zero, so a freshly built block is the
    identity map. No positional encoding: the block is equivariant to
    permutations of spatial positions.
    """

    def __init__(self, channels: int, rng):
        self.norm = GroupNorm(channels)
        self.q = Conv2d(channels, channels, 1, rng)
        self.k = Conv2d(channels, channels, 1, rng)
        self.v = Conv2d(channels, channels, 1, rng)
        self.proj = Conv2d(channels, channels, 1, rng, zero_init=True)
        self.channels = channels

    def __call__(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        h = self.norm(x)
        q, k, v = self.q(h), self.k(h), self.v(h)
        q = T.transpose(T.reshape(q, (B, C, H * W)), (0, 2, 1))
        k = T.reshape(k, (B, C, H * W))
        v = T.transpose(T.reshape(v, (B, C, H * W)), (0, 2, 1))
        scores = (q @ k) * (1.0 / np.sqrt(C))
        att = T.softmax(scores, axis=-1)
        out = att @ v  # (B, HW, C)
        out = T.reshape(T.transpose(out, (0, 2, 1)), (B, C, H, W))
        return x + self.proj(out)

    def named_params(self):
        return collect({"norm": self.norm, "q": self.q, "k": self.k,
                        "v": self.v, "proj": self.proj})


class Encoder(Layer):
    def __init__(self, cfg: CodecConfig, rng):
        ch = cfg.channels
        self.conv_in = Conv2d(3, ch[0], 3, rng, pad=1)
        self.levels: list[list[Layer]] = []
        self.downs: list[Conv2d] = []
        prev = ch[0]
        for i in range(cfg.m + 1):
            blocks = [ResBlock(prev, ch[i], rng), ResBlock(ch[i], ch[i], rng)]
            self.levels.append(blocks)
            prev = ch[i]
            if i < cfg.m:
                self.downs.append(Conv2d(ch[i], ch[i], 3, rng, stride=2, pad=1))
        self.attn = AttentionBlock(ch[-1], rng) if cfg.use_attention else None
        self.norm_out = GroupNorm(ch[-1])
        self.conv_out = Conv2d(ch[-1], cfg.n_z, 3, rng, pad=1)
        self.m = cfg.m

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv_in(x)
        for i, blocks in enumerate(self.levels):
            for b in blocks:
                h = b(h)
            if i < self.m:
                h = self.downs[i](h)
        if self.attn is not None:
            h = self.attn(h)
        return self.conv_out(T.silu(self.norm_out(h)))

    def named_params(self):
        children: dict[str, Layer] = {"conv_in": self.conv_in}
        for i, blocks in enumerate(self.levels):
            for j, b in enumerate(blocks):
                children[f"level{i}.block{j}"] = b
        for i, d in enumerate(self.downs):
            children[f"down{i}"] = d
        if self.attn is not None:
            children["attn"] = self.attn
        children["norm_out"] = self.norm_out
        children["conv_out"] = self.conv_out
        return collect(children)

    def spatial_specs(self) -> list[tuple[int, int, int]]:
        """(kernel, stride, pad) of every conv along the spatial path."""
        specs = [(3, 1, 1)]
        for i in range(len(self.levels)):
            specs += list(ResBlock.spatial_specs) * 2
            if i < self.m:
                specs.append((3, 2, 1))
        specs.append((3, 1, 1))
        return specs

    def input_interval(self, idx: int) -> tuple[int, int]:
        """Theoretical 1-D receptive field of latent position ``idx``.

        Only meaningful with attention disabled. The same interval applies
        to both spatial axes.
        """
        lo = hi = idx
        for k, s, p in reversed(self.spatial_specs()):
            lo = lo * s - p
            hi = hi * s - p + (k - 1)
        return lo, hi


class Decoder(Layer):
    def __init__(self, cfg: CodecConfig, rng):
        ch = cfg.channels
        self.conv_in = Conv2d(cfg.n_z, ch[-1], 3, rng, pad=1)
        self.attn = AttentionBlock(ch[-1], rng) if cfg.use_attention else None
        self.levels: list[list[Layer]] = []
        self.ups: list[Conv2d] = []
        prev = ch[-1]
        for i in range(cfg.m, -1, -1):
            blocks = [ResBlock(prev, ch[i], rng), ResBlock(ch[i], ch[i], rng)]
            self.levels.append(blocks)
            prev = ch[i]
            if i > 0:
                self.ups.append(Conv2d(ch[i], ch[i], 3, rng, pad=1))
        self.norm_out = GroupNorm(ch[0])
        self.conv_out = Conv2d(ch[0], 3, 3, rng, pad=1)
        self.m = cfg.m

    def __call__(self, z: Tensor) -> Tensor:
        h = self.conv_in(z)
        if self.attn is not None:
            h = self.attn(h)
        for i, blocks in enumerate(self.levels):
            for b in blocks:
                h = b(h)
            if i < self.m:
                h = self.ups[i](T.upsample_nearest2x(h))
        return T.tanh(self.conv_out(T.silu(self.norm_out(h))))

    def named_params(self):
        children: dict[str, Layer] = {"conv_in": self.conv_in}
        if self.attn is not None:
            children["attn"] = self.attn
        for i, blocks in enumerate(self.levels):
            for j, b in enumerate(blocks):
                children[f"level{i}.block{j}"] = b
        for i, u in enumerate(self.ups):
            children[f"up{i}"] = u
        children["norm_out"] = self.norm_out
        children["conv_out"] = self.conv_out
        return collect(children)

    @property
    def last_layer_weight(self) -> Tensor:
        """Weight tensor of the final convolution (used by the adaptive weight)."""
        return self.conv_out.w


class FeatureProxy(Layer):
    """Frozen random conv features for the pluggable reconstruction distance.

    Four stride-2 conv layers with a fixed seed; parameters never train but
    gradients flow through them to the reconstruction.
    """

    def __init__(self, seed: int = 1234):
        rng = np.random.default_rng(seed)
        chans = [3, 16, 32, 64, 64]
        self.convs = [Conv2d(chans[i], chans[i + 1], 3, rng, stride=2, pad=1)
                      for i in range(4)]
        for c in self.convs:
            c.w.requires_grad = False
            c.b.requires_grad = False
        self.seed = seed

    def features(self, x: Tensor) -> list[Tensor]:
        feats = []
        h = x
        for c in self.convs:
            h = T.silu(c(h))
            feats.append(h)
        return feats

    def __call__(self, x: Tensor, x_hat: Tensor) -> Tensor:
        fx = self.features(x)
        fy = self.features(x_hat)
        total = T.absolute(x - x_hat).mean()
        for a, b in zip(fx, fy):
            d = a - b
            total = total + (d * d).mean()
        return total

    def named_params(self):
        return collect({f"conv{i}": c for i, c in enumerate(self.convs)})


def make_rec_loss(kind: str, proxy: FeatureProxy | None = None):
    if kind == "squared_error":
        return lambda x, x_hat: ((x - x_hat) ** 2.0).mean()
    if kind == "abs_error":
        return lambda x, x_hat: T.absolute(x - x_hat).mean()
    if kind == "feature_proxy":
        assert proxy is not None
        return proxy
    raise ConfigError(f"unknown rec loss kind {kind!r}")


class Codec:
    """Encoder + codebook + decoder with its reconstruction loss."""

    def __init__(self, cfg: CodecConfig):
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        self.codebook = Codebook(cfg.K, cfg.n_z, rng=rng)
        self.proxy = FeatureProxy(seed=cfg.seed + 9999) if cfg.rec_loss_kind == "feature_proxy" else None
        self.rec_loss = make_rec_loss(cfg.rec_loss_kind, self.proxy)

    @property
    def K(self) -> int:
        return self.config.K

    @property
    def f(self) -> int:
        return self.config.f

    def latent_shape(self, H: int, W: int) -> tuple[int, int]:
        return H >> self.config.m, W >> self.config.m

    def named_params(self) -> dict[str, Tensor]:
        out = collect({"enc": self.encoder, "dec": self.decoder})
        out["codebook.entries"] = self.codebook.entries
        if self.proxy is not None:
            out.update({f"rloss.{k}": v for k, v in self.proxy.named_params().items()})
        return out

    def trainable_params(self) -> list[Tensor]:
        return [p for p in self.named_params().values() if p.requires_grad]

    def _check_size(self, H: int, W: int) -> None:
        f = self.config.f
        if H % f or W % f:
            raise ShapeError(f"input size {H}x{W} not divisible by 2^m = {f}")

    # index-codec protocol shared with the k-means pixel baseline
    def encode_indices(self, images: np.ndarray) -> np.ndarray:
        return encode_indices(Tensor(images), self)

    def decode_indices(self, grids: np.ndarray) -> np.ndarray:
        return decode_indices(grids, self)


def encode(x: Tensor, codec: Codec) -> Tensor:
    """x (B, 3, H, W) -> latent (B, n_z, H/2^m, W/2^m)."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"encode expects (B, 3, H, W), got {x.shape}")
    codec._check_size(x.shape[2], x.shape[3])
    return codec.encoder(x)


def decode(z_q: Tensor, codec: Codec) -> Tensor:
    """Latent (B, n_z, h, w) -> image (B, 3, h*2^m, w*2^m) in [-1, 1]."""
    if z_q.ndim != 4 or z_q.shape[1] != codec.config.n_z:
        raise ShapeError(
            f"decode expects (B, {codec.config.n_z}, h, w), got {z_q.shape}")
    return codec.decoder(z_q)


def reconstruct(x: Tensor, codec: Codec) -> tuple[Tensor, QuantizationResult]:
    """encode -> quantize -> straight-through -> decode."""
    z = encode(x, codec)
    z_hwc = T.transpose(z, (0, 2, 3, 1))
    q = quantize(z_hwc, codec.codebook)
    z_st = straight_through(z_hwc, q.z_q)
    x_hat = decode(T.transpose(z_st, (0, 3, 1, 2)), codec)
    return x_hat, q


def encode_indices(x: Tensor, codec: Codec) -> np.ndarray:
    """Images straight to their (B, h, w) grids of codebook indices."""
    with T.no_grad():
        z = encode(x, codec)
        q = quantize(T.transpose(z, (0, 2, 3, 1)), codec.codebook)
    return q.indices


def decode_indices(indices: np.ndarray, codec: Codec) -> np.ndarray:
    """(B, h, w) index grids back to images, without building a graph."""
    from .quantizer import lookup
    with T.no_grad():
        z_q = lookup(np.asarray(indices, dtype=np.int64), codec.codebook)
        x = decode(T.transpose(z_q, (0, 3, 1, 2)), codec)
    return x.data
