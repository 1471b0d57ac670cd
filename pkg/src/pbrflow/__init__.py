"""Dual-path rectified-flow estimation of PBR material maps.

Two denoising paths over complementary latent spaces: a per-component RGB
codec path optimized for albedo, and a unified vector-quantized codec path
for metallic/roughness, trained in two stages with cross-path feature
distillation, sampled in a few Euler steps, and extended to high-resolution
(guided patch tiling) and multi-view (cross-view attention) inputs.
"""

from .materials import MaterialTriplet, gen_material
from .render import PointLight, RenderedPair, SceneSpec, render
from .dataset import DatasetManifest, make_dataset
from .codecs import AlbedoPathCodec, MaterialPathCodec, CodecLossWeights, codec_loss, repeat_channels
from .conditioning import ConditioningBundle, build_condition
from .flow import FlowState, SamplerConfig, combine_outputs, interpolate, predict_clean, rf_loss, sample
from .unet import DualUNet, FeatureTaps, UNetConfig, VelocityPrediction, adapt_io_layers
from .training import ProjectionSet, TrainSchedule, fd_loss, train_stage1, train_stage2
from .tiling import GuidanceConfig, PatchPlan, estimate_hires, guided_step
from .multiview import ViewBatch, crossview_attention, estimate_multiview, finetune_multiview
from .metrics import perceptual, psnr, rmse, ssim
from .evaluate import EvalReport, evaluate, write_report
from .pipeline import ModelBundle, estimate_single, load_models

__all__ = [
    "MaterialTriplet",
    "gen_material",
    "PointLight",
    "RenderedPair",
    "SceneSpec",
    "render",
    "DatasetManifest",
    "make_dataset",
    "AlbedoPathCodec",
    "MaterialPathCodec",
    "CodecLossWeights",
    "codec_loss",
    "repeat_channels",
    "ConditioningBundle",
    "build_condition",
    "FlowState",
    "SamplerConfig",
    "combine_outputs",
    "interpolate",
    "predict_clean",
    "rf_loss",
    "sample",
    "DualUNet",
    "FeatureTaps",
    "UNetConfig",
    "VelocityPrediction",
    "adapt_io_layers",
    "ProjectionSet",
    "TrainSchedule",
    "fd_loss",
    "train_stage1",
    "train_stage2",
    "GuidanceConfig",
    "PatchPlan",
    "estimate_hires",
    "guided_step",
    "ViewBatch",
    "crossview_attention",
    "estimate_multiview",
    "finetune_multiview",
    "perceptual",
    "psnr",
    "rmse",
    "ssim",
    "EvalReport",
    "evaluate",
    "write_report",
    "ModelBundle",
    "estimate_single",
    "load_models",
]

__version__ = "0.1.0"
