"""Codebook-indexed video codec with a deterministic numeric core."""

from .autoencoder import AutoencoderConfig, decode_image, encode_image
from .bitstream import GopBitstream, measure_bits, pack_indices, unpack_indices
from .codec import (
    CodecConfig,
    CodecModel,
    decode_sequence,
    encode_sequence,
    init_bundle,
    model_from_bytes,
)
from .context import ContextConfig, context_decode, context_encode, wca_layer
from .errors import VqvcError
from .metrics import bd_rate, bpp, ms_ssim, psnr
from .quantizer import (
    Codebook,
    CodebookSet,
    CodebookSpec,
    IndexGrid,
    KEYFRAME_SPEC,
    PREDICTED_SPECS,
    dequantize,
    fit_codebooks,
    multistage_dequantize,
    multistage_quantize,
    quantize,
)
from .tensor_ops import DEFAULT_POLICY, EvalPolicy
from .weights import WeightBundle, load_weights, save_weights

__version__ = "0.1.0"
