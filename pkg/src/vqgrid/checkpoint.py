"""Checkpoint files: a magic tag, a text config header, then named tensors.

Layout (little-endian): magic[4] | version u32 | header_len u64 | header utf-8
| count u32 | count * (name_len u16 | name utf-8 | tensor blob). Codec files
use magic VQGC, the discriminator VQGD, the transformer VQGT.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .adversary import AdversaryConfig, PatchDiscriminator
from .codec import Codec, CodecConfig
from .errors import ConfigError, ContractError
from .layers import load_into
from .tensor import read_array, write_array
from .transformer import LatentTransformer, TransformerConfig

VERSION = 1
CODEC_MAGIC = b"VQGC"
DISC_MAGIC = b"VQGD"
TRANSFORMER_MAGIC = b"VQGT"


def save_blobs(path, magic: bytes, header: str, blobs: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", VERSION))
        hdr = header.encode("utf-8")
        f.write(struct.pack("<Q", len(hdr)))
        f.write(hdr)
        f.write(struct.pack("<I", len(blobs)))
        for name, arr in blobs.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            write_array(f, np.asarray(arr))


def load_blobs(path, magic: bytes) -> tuple[str, dict[str, np.ndarray]]:
    if not Path(path).exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    with open(path, "rb") as f:
        got = f.read(4)
        if got != magic:
            raise ContractError(f"{path}: expected magic {magic!r}, found {got!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ContractError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = f.read(hlen).decode("utf-8")
        (count,) = struct.unpack("<I", f.read(4))
        blobs = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            blobs[name] = read_array(f)
    return header, blobs


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _config_header(mapping: dict) -> str:
    from .config import format_section
    return format_section(mapping)


def _parse_header(header: str) -> dict:
    from .config import parse_section
    return parse_section(header)


def save_codec(path, codec: Codec, optimizer=None) -> None:
    blobs = {k: v.data for k, v in codec.named_params().items()}
    if optimizer is not None:
        blobs.update(optimizer.state_arrays("opt"))
    header = _config_header({"kind": "conv", **codec.config.to_mapping()})
    save_blobs(path, CODEC_MAGIC, header, blobs)


def load_codec(path) -> tuple[Codec, dict[str, np.ndarray]]:
    header, blobs = load_blobs(path, CODEC_MAGIC)
    mapping = _parse_header(header)
    if mapping.pop("kind", "conv") != "conv":
        raise ContractError(f"{path} is not a convolutional codec checkpoint")
    codec = Codec(CodecConfig.from_mapping(mapping))
    from .tensor import default_dtype
    for name, p in codec.named_params().items():
        if name not in blobs:
            raise ContractError(f"{path} is missing tensor {name!r}")
        p.data = blobs[name].astype(default_dtype())
    return codec, blobs


def save_pixel_codec(path, pixel_codec) -> None:
    header = _config_header({"kind": "kmeans", "K": pixel_codec.K})
    save_blobs(path, CODEC_MAGIC, header, {"centroids": pixel_codec.centroids})


def load_any_codec(path):
    """Load either codec flavor: a trained conv codec or the k-means baseline."""
    from .kmeans import PixelCodec
    header, blobs = load_blobs(path, CODEC_MAGIC)
    mapping = _parse_header(header)
    kind = mapping.pop("kind", "conv")
    if kind == "kmeans":
        return PixelCodec(centroids=blobs["centroids"].copy())
    codec, _ = load_codec(path)
    return codec


def save_discriminator(path, disc: PatchDiscriminator, cfg: AdversaryConfig,
                       optimizer=None) -> None:
    blobs = {k: v.data for k, v in disc.named_params().items()}
    if optimizer is not None:
        blobs.update(optimizer.state_arrays("opt"))
    save_blobs(path, DISC_MAGIC, _config_header(cfg.to_mapping()), blobs)


def load_discriminator(path) -> tuple[PatchDiscriminator, AdversaryConfig, dict]:
    header, blobs = load_blobs(path, DISC_MAGIC)
    cfg = AdversaryConfig.from_mapping(_parse_header(header))
    disc = PatchDiscriminator(base_channels=cfg.base_channels, seed=cfg.seed)
    load_into(disc, blobs)
    return disc, cfg, blobs


def save_transformer(path, model: LatentTransformer, optimizer=None) -> None:
    blobs = {k: v.data for k, v in model.named_params().items()}
    if optimizer is not None:
        blobs.update(optimizer.state_arrays("opt"))
    save_blobs(path, TRANSFORMER_MAGIC, _config_header(model.config.to_mapping()), blobs)


def load_transformer(path) -> tuple[LatentTransformer, dict[str, np.ndarray]]:
    header, blobs = load_blobs(path, TRANSFORMER_MAGIC)
    model = LatentTransformer(TransformerConfig.from_mapping(_parse_header(header)))
    load_into(model, blobs)
    return model, blobs
