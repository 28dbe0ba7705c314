"""Parser-prompted transformer for image restoration."""

from .attention import ChannelAttention, InterPPA, IntraPPA, channel_attention
from .backbone import (ChannelLayerNorm, Downsample, IN2PPTBlock, IRNet, PPTB,
                       Upsample, crop_to, pad_to_multiple)
from .checkpoint import load_checkpoint, load_manifest, save_checkpoint
from .config import (ABLATION_VARIANTS, DataConfig, ModelConfig, RunConfig,
                     TrainConfig)
from .data import DatasetManifest, RestorationSample, make_synthetic_pair
from .errors import InvalidArgumentError, NumericError
from .evaluation import MetricReport, evaluate_pair, mae, psnr, ssim, to_luma
from .fusion import BiPPF, CPFPGate, PPFN
from .model import PPTformer, build_model, restore
from .parsers import PPFGNet, kmeans_segments, stub_parse
from .training import (TrainState, build_variant_model, evaluate_model, lr_at,
                       restoration_loss, run_ablation, train)

__version__ = "0.1.0"

__all__ = [
    "ABLATION_VARIANTS", "BiPPF", "CPFPGate", "ChannelAttention",
    "ChannelLayerNorm", "DataConfig", "DatasetManifest", "Downsample",
    "IN2PPTBlock", "IRNet", "InterPPA", "IntraPPA", "InvalidArgumentError",
    "MetricReport", "ModelConfig", "NumericError", "PPFGNet", "PPFN", "PPTB",
    "PPTformer", "RestorationSample", "RunConfig", "TrainConfig", "TrainState",
    "Upsample", "build_model", "build_variant_model", "channel_attention",
    "crop_to", "evaluate_model", "evaluate_pair", "kmeans_segments",
    "load_checkpoint", "load_manifest", "lr_at", "mae", "make_synthetic_pair",
    "pad_to_multiple", "psnr", "restoration_loss", "restore", "run_ablation",
    "save_checkpoint", "ssim", "stub_parse", "to_luma", "train",
]
