"""Event+frame optical flow with spatially guided temporal aggregation.

A numpy library covering the full desk-scale pipeline: a minimal
reverse-mode tensor engine, event stream handling and voxelization, the
image-event guidance representation, correlation volumes and lookups,
cross-modal guided aggregation, ConvGRU refinement, a synthetic data
generator, flow metrics, and a CLI tying everything together.
"""

from .config import ModelConfig, RunConfig
from .events import Event, EventWindow, VoxelGrid, load_events, save_events, \
    segment_reference_targets, slice_window, voxelize
from .ice import IceTensor, build_ice, normalize_image, normalize_voxel
from .correlation import build_guide_corr, build_temporal_corr, linear_lookup, lookup
from .metrics import MetricReport, ae, epe, evaluate_flow, npe, outlier_pct, \
    psnr, ssim, warp_backward
from .model import FlowModel, SampleInputs, upsample_flow
from .synth import SynthConfig, SyntheticSample, gen_dataset, gen_scene, \
    load_dataset, simulate_events
from .tensor import Tensor, bilinear_sample, conv2d, finite_diff_check, l1, \
    matmul, no_grad, softmax_rows
from .train import sequence_loss, train

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "RunConfig", "Event", "EventWindow", "VoxelGrid",
    "load_events", "save_events", "segment_reference_targets", "slice_window",
    "voxelize", "IceTensor", "build_ice", "normalize_image", "normalize_voxel",
    "build_guide_corr", "build_temporal_corr", "linear_lookup", "lookup",
    "MetricReport", "ae", "epe", "evaluate_flow", "npe", "outlier_pct", "psnr",
    "ssim", "warp_backward", "FlowModel", "SampleInputs", "upsample_flow",
    "SynthConfig", "SyntheticSample", "gen_dataset", "gen_scene", "load_dataset",
    "simulate_events", "Tensor", "bilinear_sample", "conv2d",
    "finite_diff_check", "l1", "matmul", "no_grad", "softmax_rows",
    "sequence_loss", "train",
]
