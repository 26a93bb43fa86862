"""Multi-rate lossy codec built on Tucker decomposition of tensorized images."""
from .bitstream import BitstreamError, CompressedPayload, RateConfig, compute_bpp, deserialize, serialize
from .codec import (
    EVALUATION_CONFIGS,
    TRAINING_CONFIGS,
    CodecError,
    CodecInstance,
    ModelMismatchError,
    compress,
    compress_tensor,
    decompress,
    fit_quantizers,
    rate_control,
)
from .metrics import MetricReport, ms_ssim, psnr
from .rangecoder import BACKEND
from .tucker import HooiSettings, TuckerFactors, hooi

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BitstreamError",
    "CodecError",
    "CodecInstance",
    "CompressedPayload",
    "EVALUATION_CONFIGS",
    "HooiSettings",
    "MetricReport",
    "ModelMismatchError",
    "RateConfig",
    "TRAINING_CONFIGS",
    "TuckerFactors",
    "compress",
    "compress_tensor",
    "compute_bpp",
    "decompress",
    "deserialize",
    "fit_quantizers",
    "hooi",
    "ms_ssim",
    "psnr",
    "rate_control",
    "serialize",
]
