"""Training loops for both stages, plus the file-level task runners used by
the CLI: checkpointing, metric CSVs, and the encoded-dataset cache.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from . import tensor as T
from .adversary import PatchDiscriminator, train_step
from .checkpoint import (file_hash, load_any_codec, load_transformer, save_codec,
                         save_discriminator, save_transformer)
from .codec import Codec
from .config import ExperimentConfig, OptimizerConfig, write_provenance
from .data import DatasetHandle, ingest_dataset
from .errors import ConfigError, NumericError
from .metrics import MetricsLog, TimingLog
from .optim import Adam
from .quantizer import IndexGrid
from .scan_orders import build
from .tensor import Tensor, backward
from .transformer import (LatentTransformer, TokenSequence, TransformerConfig,
                          make_conditional, make_unconditional, nll, nll_loss)

VQGAN_FIELDS = ["step", "g_loss", "d_loss", "lambda", "rec_loss"]
TRANSFORMER_FIELDS = ["step", "nll"]


def apply_dtype(cfg: ExperimentConfig) -> None:
    T.set_default_dtype(np.float64 if cfg.dtype == "float64" else np.float32)


def _require_dataset(cfg: ExperimentConfig) -> DatasetHandle:
    if not cfg.dataset:
        raise ConfigError("this task needs a `dataset` path")
    cond = cfg.condition_dataset or None
    return ingest_dataset(cfg.dataset, cfg.codec.image_size, condition_dir=cond)


# -- stage 1 -------------------------------------------------------------


def fit_vqgan(images: np.ndarray, codec: Codec, disc: PatchDiscriminator,
              adv_cfg, opt_cfg: OptimizerConfig, steps: int, batch_size: int,
              seed: int, on_step=None) -> list:
    """In-memory training loop over an (N, 3, S, S) image stack."""
    handle = DatasetHandle(images=np.asarray(images), names=[str(i) for i in range(len(images))])
    g_opt = Adam(codec.trainable_params(), lr=opt_cfg.lr, betas=(opt_cfg.beta1, opt_cfg.beta2))
    d_opt = Adam(disc.params(), lr=opt_cfg.lr, betas=(opt_cfg.beta1, opt_cfg.beta2))
    reports = []
    for step, idx in enumerate(handle.batches(batch_size, seed, steps)):
        batch = Tensor(handle.images[idx])
        report = train_step(batch, codec, disc, g_opt, d_opt, step, adv_cfg)
        if not np.isfinite([report.g_loss, report.d_loss]).all():
            raise NumericError(f"non-finite loss at step {step}; aborting")
        reports.append(report)
        if on_step is not None:
            on_step(report)
    return reports


def _reseed_from_batch(codec: Codec, images: np.ndarray,
                       rng: np.random.Generator) -> int:
    """Revive codes the current batch never hit, using its encoder outputs."""
    from .codec import encode
    from .quantizer import quantize, reseed_dead_codes
    with T.no_grad():
        z = T.transpose(encode(Tensor(images), codec), (0, 2, 3, 1))
        q = quantize(z, codec.codebook)
    used = np.zeros(codec.K, dtype=bool)
    used[np.unique(q.indices)] = True
    return reseed_dead_codes(codec.codebook, z.data, used, rng)


def eval_reconstruction(codec: Codec, images: np.ndarray,
                        batch: int = 16) -> tuple[float, float]:
    """(mean squared error, fraction of codebook entries used)."""
    from .codec import reconstruct
    errs = []
    used = np.zeros(codec.K, dtype=bool)
    with T.no_grad():
        for start in range(0, len(images), batch):
            x = Tensor(images[start:start + batch])
            x_hat, q = reconstruct(x, codec)
            errs.append(((x_hat.data - x.data) ** 2).mean())
            used[np.unique(q.indices)] = True
    return float(np.mean(errs)), float(used.mean())


def run_train_vqgan(cfg: ExperimentConfig) -> dict:
    apply_dtype(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_provenance(out, cfg)
    handle = _require_dataset(cfg)

    codec = Codec(cfg.codec)
    disc = PatchDiscriminator(base_channels=cfg.adversary.base_channels,
                              seed=cfg.adversary.seed)
    opt_cfg = cfg.optimizer_for("codec")
    g_opt = Adam(codec.trainable_params(), lr=opt_cfg.lr, betas=(opt_cfg.beta1, opt_cfg.beta2))
    d_opt = Adam(disc.params(), lr=opt_cfg.lr, betas=(opt_cfg.beta1, opt_cfg.beta2))

    log = MetricsLog(out / "metrics.csv", VQGAN_FIELDS)
    eval_log = MetricsLog(out / "eval.csv", ["step", "rec_error", "codebook_usage"])
    timing = TimingLog(out / "timing.csv")
    codec_path, disc_path = out / "codec.vqgc", out / "disc.vqgd"

    saved_once = False
    reseed_rng = np.random.default_rng(cfg.seed + 77)
    for step, idx in enumerate(handle.batches(cfg.batch_size, cfg.seed, cfg.steps)):
        batch = Tensor(handle.images[idx])
        report = train_step(batch, codec, disc, g_opt, d_opt, step, cfg.adversary)
        if not np.isfinite([report.g_loss, report.d_loss]).all():
            msg = f"non-finite loss at step {step}; aborting"
            if saved_once:
                msg += f" (last good checkpoint kept at {codec_path})"
            raise NumericError(msg)
        log.append(step=step, g_loss=report.g_loss, d_loss=report.d_loss,
                   **{"lambda": report.lambda_}, rec_loss=report.rec_loss)
        timing.append(step)
        if cfg.codebook_reseed_every and (step + 1) % cfg.codebook_reseed_every == 0:
            _reseed_from_batch(codec, handle.images[idx], reseed_rng)
        if cfg.eval_every and (step % cfg.eval_every == 0 or step == cfg.steps - 1):
            rec_err, usage = eval_reconstruction(codec, handle.images)
            eval_log.append(step=step, rec_error=rec_err, codebook_usage=usage)
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_codec(codec_path, codec, optimizer=g_opt)
            save_discriminator(disc_path, disc, cfg.adversary, optimizer=d_opt)
            saved_once = True
    save_codec(codec_path, codec, optimizer=g_opt)
    save_discriminator(disc_path, disc, cfg.adversary, optimizer=d_opt)
    rec_err, usage = eval_reconstruction(codec, handle.images)
    return {"codec": str(codec_path), "disc": str(disc_path),
            "rec_error": rec_err, "codebook_usage": usage}


# -- encoded-dataset cache -------------------------------------------------


def _dataset_fingerprint(handle: DatasetHandle) -> str:
    h = hashlib.sha256()
    for name in handle.names:
        h.update(name.encode())
    h.update(str(handle.images.shape).encode())
    return h.hexdigest()


def encode_dataset_cached(codec, codec_ckpt_path, handle: DatasetHandle,
                          out_dir, tag: str = "data", conditions: bool = False,
                          batch: int = 16) -> np.ndarray:
    """Encode every image to its index grid, caching by codec + data identity."""
    key = hashlib.sha256(
        (file_hash(codec_ckpt_path) + _dataset_fingerprint(handle) + tag).encode()
    ).hexdigest()[:16]
    cache_dir = Path(out_dir) / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"encoded_{tag}_{key}.npz"
    if path.exists():
        return np.load(path)["grids"]
    source = handle.conditions if conditions else handle.images
    chunks = [codec.encode_indices(source[s:s + batch])
              for s in range(0, len(source), batch)]
    grids = np.concatenate(chunks, axis=0)
    np.savez(path, grids=grids)
    return grids


# -- stage 2 -------------------------------------------------------------


def build_sequences(grids: np.ndarray, K: int, order_kind: str,
                    tcfg: TransformerConfig, cond_grids: np.ndarray | None = None,
                    cond_K: int = 0, labels: np.ndarray | None = None) -> list[TokenSequence]:
    n, h, w = grids.shape
    order = build(order_kind, h, w)
    cond_order = None
    if cond_grids is not None:
        cond_order = build(order_kind, cond_grids.shape[1], cond_grids.shape[2])
    seqs = []
    for i in range(n):
        grid = IndexGrid(grids[i], K)
        if cond_grids is not None:
            seqs.append(make_conditional(IndexGrid(cond_grids[i], cond_K), grid,
                                         order, cond_order, tcfg))
        elif labels is not None:
            seqs.append(make_conditional(int(labels[i]), grid, order, None, tcfg))
        else:
            seqs.append(make_unconditional(grid, order, tcfg))
    return seqs


def make_transformer_config(arch, K: int, grid_shape: tuple[int, int],
                            K_cond: int = 0, cond_shape=None,
                            n_classes: int = 0, seed: int = 0) -> TransformerConfig:
    if arch.K and arch.K != K:
        raise ConfigError(
            f"transformer config pins K={arch.K} but the codec has K={K}")
    prefix = 1  # BOS or class token
    if K_cond:
        prefix = cond_shape[0] * cond_shape[1]
    needed = prefix + grid_shape[0] * grid_shape[1]
    seq_len = arch.seq_len or needed
    if seq_len < needed:
        raise ConfigError(f"seq_len {seq_len} below required {needed}")
    return TransformerConfig(
        K=K, seq_len=seq_len, n_layers=arch.n_layers, n_heads=arch.n_heads,
        d_model=arch.d_model, d_ff=arch.d_ff, dropout=arch.dropout,
        K_cond=K_cond, n_classes=n_classes, use_coords=arch.use_coords, seed=seed)


def fit_transformer(seqs: list[TokenSequence], model: LatentTransformer,
                    opt_cfg: OptimizerConfig, steps: int, batch_size: int,
                    seed: int, on_step=None, opt: Adam | None = None) -> list[float]:
    """Minimize mean NLL per data token over the sequence set."""
    if opt is None:
        opt = Adam(model.trainable_params(), lr=opt_cfg.lr,
                   betas=(opt_cfg.beta1, opt_cfg.beta2))
    rng = np.random.default_rng(seed)
    drop_rng = np.random.default_rng(seed + 1) if model.config.dropout > 0 else None
    losses = []
    for step in range(steps):
        idx = rng.choice(len(seqs), size=min(batch_size, len(seqs)), replace=False)
        loss = nll_loss([seqs[i] for i in idx], model, train_rng=drop_rng)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericError(f"non-finite nll at step {step}; aborting")
        opt.zero_grad()
        backward(loss)
        opt.step()
        losses.append(value)
        if on_step is not None:
            on_step(step, value)
    return losses


def run_train_transformer(cfg: ExperimentConfig) -> dict:
    apply_dtype(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_provenance(out, cfg)
    if not cfg.codec_checkpoint:
        raise ConfigError("train-transformer needs `codec_checkpoint`")
    codec = load_any_codec(cfg.codec_checkpoint)
    handle = _require_dataset(cfg)
    grids = encode_dataset_cached(codec, cfg.codec_checkpoint, handle, out)

    cond_grids, cond_K, labels, n_classes, cond_shape = None, 0, None, 0, None
    if cfg.conditioning == "spatial":
        if handle.conditions is None:
            raise ConfigError("spatial conditioning needs `condition_dataset`")
        if not cfg.cond_codec_checkpoint:
            raise ConfigError("spatial conditioning needs `cond_codec_checkpoint`")
        cond_codec = load_any_codec(cfg.cond_codec_checkpoint)
        if getattr(cond_codec, "f", 1) != getattr(codec, "f", 1):
            raise ConfigError(
                "condition codec and data codec must share one downsampling factor")
        cond_grids = encode_dataset_cached(cond_codec, cfg.cond_codec_checkpoint,
                                           handle, out, tag="cond", conditions=True)
        cond_K = cond_codec.K
        cond_shape = cond_grids.shape[1:]
    elif cfg.conditioning == "class":
        if handle.labels is None:
            raise ConfigError("class conditioning needs labels.txt in the dataset")
        labels = handle.labels
        n_classes = int(labels.max()) + 1

    tcfg = make_transformer_config(cfg.transformer, codec.K, grids.shape[1:],
                                   K_cond=cond_K, cond_shape=cond_shape,
                                   n_classes=n_classes, seed=cfg.seed)
    model = LatentTransformer(tcfg)
    seqs = build_sequences(grids, codec.K, cfg.scan_order, tcfg,
                           cond_grids=cond_grids, cond_K=cond_K, labels=labels)

    log = MetricsLog(out / "metrics.csv", TRANSFORMER_FIELDS)
    timing = TimingLog(out / "timing.csv")

    def on_step(step, value):
        log.append(step=step, nll=value)
        timing.append(step)

    opt_cfg = cfg.optimizer_for("transformer")
    opt = Adam(model.trainable_params(), lr=opt_cfg.lr,
               betas=(opt_cfg.beta1, opt_cfg.beta2))
    fit_transformer(seqs, model, opt_cfg, cfg.steps, cfg.batch_size, cfg.seed,
                    on_step=on_step, opt=opt)
    ckpt = out / "transformer.vqgt"
    save_transformer(ckpt, model, optimizer=opt)
    final = nll(seqs[: min(len(seqs), 64)], model)
    return {"transformer": str(ckpt), "final_nll": final, "vocab": tcfg.vocab_size}


# -- sampling / reconstruction tasks ----------------------------------------


def run_sample(cfg: ExperimentConfig) -> dict:
    from .images import save_image
    from .quantizer import save_index_grid
    from .sampler import SamplingParams, sample_grid, sliding_window_sample

    apply_dtype(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_provenance(out, cfg)
    if not cfg.transformer_checkpoint:
        raise ConfigError("sample needs `transformer_checkpoint`")
    if not cfg.codec_checkpoint:
        raise ConfigError("sample needs `codec_checkpoint` to decode grids")
    model, _ = load_transformer(cfg.transformer_checkpoint)
    codec = load_any_codec(cfg.codec_checkpoint)

    h, w = cfg.sampling.height, cfg.sampling.width
    order = build(cfg.scan_order, h, w)

    conds: list = [None] * cfg.sampling.n_samples
    if cfg.conditioning == "class":
        n_classes = max(model.config.n_classes, 1)
        conds = [i % n_classes for i in range(cfg.sampling.n_samples)]
    elif cfg.conditioning == "spatial":
        if not (cfg.dataset and cfg.condition_dataset and cfg.cond_codec_checkpoint):
            raise ConfigError("spatial sampling needs `dataset`, `condition_dataset` "
                              "and `cond_codec_checkpoint`")
        handle = ingest_dataset(cfg.dataset, cfg.codec.image_size,
                                condition_dir=cfg.condition_dataset)
        cond_codec = load_any_codec(cfg.cond_codec_checkpoint)
        maps = handle.conditions[: cfg.sampling.n_samples]
        grids_cond = cond_codec.encode_indices(maps)
        conds = [IndexGrid(g, cond_codec.K) for g in grids_cond]

    paths = []
    for i in range(cfg.sampling.n_samples):
        params = SamplingParams(temperature=cfg.sampling.temperature,
                                top_k=cfg.sampling.top_k, seed=cfg.seed + i)
        prefix = 1
        if isinstance(conds[i], IndexGrid):
            prefix = conds[i].h * conds[i].w
        if prefix + h * w <= model.config.seq_len and not cfg.sampling.coords:
            grid = sample_grid(model, (h, w), order, params, cond=conds[i])
        else:
            sw_cond = conds[i] if isinstance(conds[i], IndexGrid) else None
            grid = sliding_window_sample(model, (h, w), order, params, cond=sw_cond,
                                         coords=cfg.sampling.coords)
        save_index_grid(out / f"sample_{i:03d}.grid.txt", grid)
        img = codec.decode_indices(grid.values[None])[0]
        path = out / f"sample_{i:03d}.png"
        save_image(path, img)
        paths.append(str(path))
    return {"samples": paths}


def run_reconstruct(cfg: ExperimentConfig, in_dir: str | None = None) -> dict:
    from .images import save_image

    apply_dtype(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_provenance(out, cfg)
    if not cfg.codec_checkpoint:
        raise ConfigError("reconstruct needs `codec_checkpoint`")
    codec = load_any_codec(cfg.codec_checkpoint)
    src = in_dir or cfg.dataset
    if not src:
        raise ConfigError("reconstruct needs an input directory (`--in` or `dataset`)")
    size = cfg.codec.image_size
    handle = ingest_dataset(src, size)
    log = MetricsLog(out / "reconstruction.csv", ["step", "name", "mse"])
    for i, name in enumerate(handle.names):
        grids = codec.encode_indices(handle.images[i:i + 1])
        rec = codec.decode_indices(grids)[0]
        mse = float(((rec - handle.images[i]) ** 2).mean())
        save_image(out / f"rec_{name}", rec)
        log.append(step=i, name=name, mse=mse)
    return {"count": len(handle.names), "out": str(out)}
