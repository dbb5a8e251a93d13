"""Two-stage discrete-latent image synthesis.

Stage 1 compresses images into grids of codebook indices with an
adversarially trained convolutional autoencoder; stage 2 models the grids
autoregressively with a causal transformer and samples new ones, sliding a
context window for grids larger than the trained sequence length.
"""

from .codec import Codec, CodecConfig, decode, encode, reconstruct
from .errors import (ConfigError, ContractError, NumericError, ShapeError,
                     VqgridError)
from .estimators import LatentSequenceModel, PixelPaletteCodec, VQImageCodec
from .quantizer import Codebook, IndexGrid, lookup, quantize, straight_through, vq_loss
from .sampler import SamplingParams, plan_windows, sample_grid, sample_next, sliding_window_sample
from .scan_orders import ScanOrder, build, flatten, unflatten
from .tensor import Tensor, backward, grad_check, no_grad
from .transformer import (LatentTransformer, TokenSequence, TransformerConfig,
                          causal_attention, make_conditional, make_unconditional, nll)

__version__ = "0.1.0"

__all__ = [
    "Codec", "CodecConfig", "decode", "encode", "reconstruct",
    "ConfigError", "ContractError", "NumericError", "ShapeError", "VqgridError",
    "LatentSequenceModel", "PixelPaletteCodec", "VQImageCodec",
    "Codebook", "IndexGrid", "lookup", "quantize", "straight_through", "vq_loss",
    "SamplingParams", "plan_windows", "sample_grid", "sample_next",
    "sliding_window_sample",
    "ScanOrder", "build", "flatten", "unflatten",
    "Tensor", "backward", "grad_check", "no_grad",
    "LatentTransformer", "TokenSequence", "TransformerConfig", "causal_attention",
    "make_conditional", "make_unconditional", "nll",
    "__version__",
]
