"""Token-guided image pre-editing and variable-bitrate learned compression."""

from .codec import Bitstream, CodecConfig, LatentPack, VariableRateCodec, quantize
from .errors import (
    ConfigurationError,
    DecodeError,
    DimensionError,
    EncodeError,
    FormatError,
    LvcodecError,
    NumericError,
)
from .evalkit import RAPoint, bd_rate, bpp, pareto_front, psnr, sweep_curve
from .losses import LambdaPreset, default_presets, total_loss
from .pipeline import Pipeline, build_pipeline, load_checkpoint, save_checkpoint
from .preedit import PreEditConfig, PreEditNet
from .tokens import (
    ToyTokenExtractor,
    extract_tokens,
    get_extractor,
    load_tokens,
    rank_loss,
    save_tokens,
    soft_rank,
    token_mse,
    tokens_to_spatial,
)
from .trainer import TrainConfig, load_dataset, run_stage

__version__ = "0.1.0"

__all__ = [
    "Bitstream",
    "CodecConfig",
    "ConfigurationError",
    "DecodeError",
    "DimensionError",
    "EncodeError",
    "FormatError",
    "LambdaPreset",
    "LatentPack",
    "LvcodecError",
    "NumericError",
    "Pipeline",
    "PreEditConfig",
    "PreEditNet",
    "RAPoint",
    "ToyTokenExtractor",
    "TrainConfig",
    "VariableRateCodec",
    "bd_rate",
    "bpp",
    "build_pipeline",
    "default_presets",
    "extract_tokens",
    "get_extractor",
    "load_checkpoint",
    "load_dataset",
    "load_tokens",
    "pareto_front",
    "psnr",
    "quantize",
    "rank_loss",
    "run_stage",
    "save_checkpoint",
    "save_tokens",
    "soft_rank",
    "sweep_curve",
    "token_mse",
    "tokens_to_spatial",
    "total_loss",
]
