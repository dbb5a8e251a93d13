"""scikit-learn-style estimators wrapping the two trainable stages.

``VQImageCodec`` is a transformer in the sklearn sense: fit on images,
transform them into integer index grids, invert back to images.
``PixelPaletteCodec`` is the downsampling-free k-means variant with the same
surface. ``LatentSequenceModel`` fits the autoregressive stage on index grids
and samples new ones. All three follow the get_params/set_params convention,
keep constructor arguments untouched, and store learned state in
trailing-underscore attributes.
"""

from __future__ import annotations

import inspect

import numpy as np

from .adversary import AdversaryConfig, PatchDiscriminator
from .checkpoint import (load_any_codec, load_transformer, save_codec, save_pixel_codec,
                         save_transformer)
from .codec import Codec, CodecConfig
from .config import OptimizerConfig
from .errors import ConfigError, ContractError
from .kmeans import fit_pixel_codec
from .quantizer import IndexGrid
from .sampler import SamplingParams, sample_grid, sliding_window_sample
from .scan_orders import build
from .train import build_sequences, fit_transformer, fit_vqgan, make_transformer_config
from .transformer import LatentTransformer, nll
from .validation import check_fitted, check_images, check_index_grids


class BaseEstimator:
    """get_params/set_params over the constructor signature."""

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ConfigError(f"invalid parameter {key!r} for {type(self).__name__}")
            setattr(self, key, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


class VQImageCodec(BaseEstimator):
    """Adversarially trained discrete autoencoder as an image<->grid transformer.

    fit(X) trains encoder, codebook, decoder and the patch discriminator on a
    stack of [-1, 1] images; transform(X) yields (N, h, w) index grids and
    inverse_transform(S) decodes them back.
    """

    def __init__(self, m=2, base_channels=32, n_z=16, codebook_size=256,
                 image_size=32, rec_loss="abs_error", beta=0.25, disc_start=1000,
                 use_attention=True, steps=500, batch_size=8, lr=1e-4,
                 beta1=0.5, beta2=0.9, seed=0):
        self.m = m
        self.base_channels = base_channels
        self.n_z = n_z
        self.codebook_size = codebook_size
        self.image_size = image_size
        self.rec_loss = rec_loss
        self.beta = beta
        self.disc_start = disc_start
        self.use_attention = use_attention
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.seed = seed
        self.codec_ = None
        self.disc_ = None
        self.history_ = None

    def _configs(self):
        ccfg = CodecConfig(m=self.m, base_channels=self.base_channels, n_z=self.n_z,
                           K=self.codebook_size, image_size=self.image_size,
                           rec_loss_kind=self.rec_loss, use_attention=self.use_attention,
                           seed=self.seed)
        acfg = AdversaryConfig(disc_start=self.disc_start, beta=self.beta, seed=self.seed)
        ocfg = OptimizerConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2)
        return ccfg, acfg, ocfg

    def fit(self, X, y=None):
        X = check_images(X, self.image_size)
        ccfg, acfg, ocfg = self._configs()
        self.codec_ = Codec(ccfg)
        self.disc_ = PatchDiscriminator(base_channels=acfg.base_channels, seed=self.seed)
        reports = fit_vqgan(X, self.codec_, self.disc_, acfg, ocfg,
                            steps=self.steps, batch_size=self.batch_size, seed=self.seed)
        self.history_ = [r.rec_loss for r in reports]
        return self

    def transform(self, X) -> np.ndarray:
        check_fitted(self, "codec_")
        X = check_images(X)
        return self.codec_.encode_indices(X)

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X).transform(X)

    def inverse_transform(self, S) -> np.ndarray:
        check_fitted(self, "codec_")
        S = check_index_grids(S, self.codec_.K)
        return self.codec_.decode_indices(S)

    def reconstruct(self, X) -> np.ndarray:
        return self.inverse_transform(self.transform(X))

    def score(self, X, y=None) -> float:
        """Negative reconstruction MSE (higher is better)."""
        X = check_images(X)
        return -float(((self.reconstruct(X) - X) ** 2).mean())

    def save(self, path) -> None:
        check_fitted(self, "codec_")
        save_codec(path, self.codec_)

    def load_checkpoint(self, path):
        codec = load_any_codec(path)
        if not isinstance(codec, Codec):
            raise ContractError(f"{path} holds a pixel-palette codec, not a conv codec")
        self.codec_ = codec
        return self


class PixelPaletteCodec(BaseEstimator):
    """k-means RGB dictionary: pixels in, palette-index grids out (f=1)."""

    def __init__(self, n_colors=512, max_pixels=200_000, seed=0):
        self.n_colors = n_colors
        self.max_pixels = max_pixels
        self.seed = seed
        self.codec_ = None

    def fit(self, X, y=None):
        X = check_images(X)
        self.codec_ = fit_pixel_codec(X, k=self.n_colors, seed=self.seed,
                                      max_pixels=self.max_pixels)
        return self

    def transform(self, X) -> np.ndarray:
        check_fitted(self, "codec_")
        return self.codec_.encode_indices(check_images(X))

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X).transform(X)

    def inverse_transform(self, S) -> np.ndarray:
        check_fitted(self, "codec_")
        S = check_index_grids(S, self.codec_.K)
        return self.codec_.decode_indices(S)

    def score(self, X, y=None) -> float:
        X = check_images(X)
        return -float(((self.inverse_transform(self.transform(X)) - X) ** 2).mean())

    def save(self, path) -> None:
        check_fitted(self, "codec_")
        save_pixel_codec(path, self.codec_)


class LatentSequenceModel(BaseEstimator):
    """Causal transformer over index grids: fit on grids, sample new ones.

    ``y`` in fit selects the conditioning: integer class labels, or a stack
    of condition index grids (same shape, separate vocabulary).
    """

    def __init__(self, n_layers=4, n_heads=4, d_model=128, d_ff=512, dropout=0.0,
                 scan_order="row_major", vocab_size=0, cond_vocab_size=0,
                 steps=500, batch_size=8, lr=3e-4, beta1=0.9, beta2=0.95,
                 temperature=1.0, top_k=100, seed=0):
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_model = d_model
        self.d_ff = d_ff
        self.dropout = dropout
        self.scan_order = scan_order
        self.vocab_size = vocab_size
        self.cond_vocab_size = cond_vocab_size
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.temperature = temperature
        self.top_k = top_k
        self.seed = seed
        self.model_ = None
        self.grid_shape_ = None
        self.history_ = None

    def _arch(self):
        from .config import TransformerArch
        return TransformerArch(n_layers=self.n_layers, n_heads=self.n_heads,
                               d_model=self.d_model, d_ff=self.d_ff,
                               dropout=self.dropout)

    def fit(self, S, y=None):
        S = check_index_grids(S)
        K = self.vocab_size or int(S.max()) + 1
        if S.max() >= K:
            raise ConfigError(f"grid index {S.max()} out of range for vocab {K}")
        cond_grids, cond_K, labels, n_classes, cond_shape = None, 0, None, 0, None
        if y is not None:
            y = np.asarray(y)
            if y.ndim <= 1:
                labels = y.astype(np.int64).reshape(-1)
                if len(labels) != len(S):
                    raise ContractError("labels and grids disagree in length")
                n_classes = int(labels.max()) + 1
            else:
                cond_grids = check_index_grids(y)
                if len(cond_grids) != len(S):
                    raise ContractError("condition grids and grids disagree in length")
                cond_K = self.cond_vocab_size or int(cond_grids.max()) + 1
                cond_shape = cond_grids.shape[1:]
        tcfg = make_transformer_config(self._arch(), K, S.shape[1:], K_cond=cond_K,
                                       cond_shape=cond_shape, n_classes=n_classes,
                                       seed=self.seed)
        self.model_ = LatentTransformer(tcfg)
        seqs = build_sequences(S, K, self.scan_order, tcfg,
                               cond_grids=cond_grids, cond_K=cond_K, labels=labels)
        ocfg = OptimizerConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2)
        self.history_ = fit_transformer(seqs, self.model_, ocfg, self.steps,
                                        self.batch_size, self.seed)
        self.grid_shape_ = S.shape[1:]
        return self

    def nll(self, S, y=None) -> float:
        """Mean negative log-likelihood in nats per grid token."""
        check_fitted(self, "model_")
        S = check_index_grids(S, self.model_.config.K)
        cfg = self.model_.config
        labels = cond = None
        if y is not None:
            y = np.asarray(y)
            if y.ndim <= 1:
                labels = y.astype(np.int64).reshape(-1)
            else:
                cond = check_index_grids(y, cfg.K_cond)
        seqs = build_sequences(S, cfg.K, self.scan_order, cfg, cond_grids=cond,
                               cond_K=cfg.K_cond, labels=labels)
        return nll(seqs, self.model_)

    def score(self, S, y=None) -> float:
        """Negative NLL (higher is better)."""
        return -self.nll(S, y)

    def sample(self, n_samples: int = 1, shape: tuple[int, int] | None = None,
               cond=None, seed: int | None = None) -> np.ndarray:
        """Draw (n_samples, h, w) grids; shapes beyond the context slide a window."""
        check_fitted(self, "model_")
        shape = tuple(shape) if shape is not None else tuple(self.grid_shape_)
        base_seed = self.seed if seed is None else seed
        out = []
        for i in range(n_samples):
            params = SamplingParams(temperature=self.temperature,
                                    top_k=min(self.top_k, self.model_.config.K),
                                    seed=base_seed + i)
            order = build("row_major", *shape)
            ci = None
            if cond is not None:
                ci = cond if isinstance(cond, (int, np.integer)) else IndexGrid(
                    check_index_grids(cond)[i % len(np.atleast_3d(cond))],
                    self.model_.config.K_cond)
            if 1 + shape[0] * shape[1] <= self.model_.config.seq_len:
                grid = sample_grid(self.model_, shape, order, params, cond=ci)
            else:
                grid = sliding_window_sample(self.model_, shape, order, params, cond=ci)
            out.append(grid.values)
        return np.stack(out)

    def save(self, path) -> None:
        check_fitted(self, "model_")
        save_transformer(path, self.model_)

    def load_checkpoint(self, path):
        self.model_, _ = load_transformer(path)
        return self
