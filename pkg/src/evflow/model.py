"""Network assembly: input preparation, ConvGRU refinement loop, upsampling.

One forward pass encodes the two guidance stacks and the N+1 event segment
voxels, builds the guide and temporal correlation volumes plus the
spatiotemporal context, then runs `iters` refinement steps. Each step
samples both correlation modalities at the current flow, encodes motion
features, (optionally) runs guided aggregation, updates the hidden state
through a 3x3 ConvGRU, and accumulates a residual flow delta. Every
iteration's flow is upsampled to full resolution and returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import GuidedAggregation, MotionFuse
from .checkpoint import ParamStore, load_checkpoint, save_checkpoint
from .config import ModelConfig
from .correlation import build_guide_corr, build_temporal_corr, linear_lookup, lookup
from .encoders import ConvStack, MixFusion, MotionEncoder
from .events import EventWindow, segment_reference_targets, slice_window, voxelize
from .ice import build_ice, normalize_image, normalize_voxel
from .tensor import Tensor, bilinear_sample, concat_channels, conv2d


@dataclass
class SampleInputs:
    """Numpy network inputs derived from one (frames, events) sample."""

    guide0: np.ndarray        # guidance stack at t_k
    guide1: np.ndarray        # guidance stack at t_k1
    seg_voxels: list          # normalized reference + target voxels (N+1)
    ctx_image: np.ndarray     # normalized frame for spatial context
    ctx_voxel: np.ndarray     # normalized full-interval voxel (B bins)
    height: int
    width: int


class FlowModel:
    """All parameters plus the forward pass, grouped for training/audit."""

    def __init__(self, config: ModelConfig | None = None, seed=0, dtype=np.float64):
        self.config = (config or ModelConfig()).validate()
        self.dtype = np.dtype(dtype)
        cfg = self.config
        store = ParamStore(seed=seed, dtype=dtype)
        self.store = store

        self.guide_encoder = ConvStack(store, "guide_enc", cfg.guide_channels,
                                       cfg.d_corr, cfg.stride)
        self.event_encoder = ConvStack(store, "event_enc", cfg.bins_seg,
                                       cfg.d_corr, cfg.stride)
        self.ctx_spatial = ConvStack(store, "ctx_spatial", 1, cfg.d_ctx, cfg.stride)
        self.ctx_temporal = ConvStack(store, "ctx_temporal", cfg.bins, cfg.d_ctx, cfg.stride)
        self.mix_fusion = MixFusion(store, "mix_fusion", cfg.d_ctx)
        self.motion_ice = MotionEncoder(store, "motion_ice", cfg.cost_channels, cfg.d_motion)
        self.motion_event = MotionEncoder(store, "motion_event", cfg.cost_channels,
                                          cfg.d_motion)
        if cfg.fusion == "guided":
            self.aggregation = GuidedAggregation(store, "aggregation", cfg.d_motion)
        else:
            self.aggregation = None
        self.fuse = MotionFuse(store, "fuse", cfg.d_motion, cfg.n_targets)
        self.state_init = store.conv("state_init", cfg.d_hidden, cfg.d_ctx, 1)
        gru_in = cfg.d_motion + cfg.d_ctx + cfg.d_hidden
        self.gru_z = store.conv("gru.z", cfg.d_hidden, gru_in, 3)
        self.gru_r = store.conv("gru.r", cfg.d_hidden, gru_in, 3)
        self.gru_h = store.conv("gru.h", cfg.d_hidden, gru_in, 3)
        self.head1 = store.conv("head.conv1", 32, cfg.d_hidden, 3)
        self.head2 = store.conv("head.conv2", 2, 32, 3)

    # -- parameter plumbing -------------------------------------------------

    @property
    def params(self):
        return self.store.params

    def param_groups(self):
        """Named groups used by the gradient-coverage checks."""
        groups = {
            "guide_encoder": "guide_enc",
            "event_encoder": "event_enc",
            "context": ("ctx_spatial", "ctx_temporal", "mix_fusion"),
            "motion_encoders": ("motion_ice", "motion_event"),
            "fuse": "fuse",
            "gru": ("gru.", "state_init"),
            "head": "head.",
        }
        if self.aggregation is not None:
            groups["aggregation"] = "aggregation"
        out = {}
        for gname, prefixes in groups.items():
            if isinstance(prefixes, str):
                prefixes = (prefixes,)
            out[gname] = [t for name, t in self.params.items()
                          if name.startswith(prefixes)]
        return out

    def parameter_manifest(self):
        return self.store.manifest()

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def save(self, path):
        save_checkpoint(path, self.store.state_arrays())

    def load(self, path):
        self.store.load_arrays(load_checkpoint(path))

    # -- input preparation ----------------------------------------------------

    def prepare_inputs(self, image0, image1, events: EventWindow, t_k, t_k1) -> SampleInputs:
        """Voxelize/normalize one sample into network input arrays.

        The guidance stack at t_k uses events over the reference span
        [t_k - dt, t_k); the stack at t_k1 uses the last target span.
        Every voxel fed to an encoder is normalized the same way the ICE
        voxel is, so event-rate changes do not rescale the features.
        """
        cfg = self.config
        image0 = np.asarray(image0, dtype=np.float64)
        image1 = np.asarray(image1, dtype=np.float64)
        if image0.shape != events.sensor_size or image1.shape != events.sensor_size:
            raise ValueError("prepare_inputs: image and sensor sizes disagree")
        dt = (t_k1 - t_k) / cfg.n_targets
        reference, targets = segment_reference_targets(events, t_k, t_k1, cfg.n_targets)

        if cfg.guidance == "ice":
            guide0 = build_ice(reference, image0, bins=cfg.bins_seg, eps=cfg.eps).values
            guide1 = build_ice(slice_window(events, t_k1 - dt, t_k1), image1,
                               bins=cfg.bins_seg, eps=cfg.eps).values
        else:
            guide0 = normalize_image(image0)[None]
            guide1 = normalize_image(image1)[None]

        seg_voxels = [normalize_voxel(voxelize(w, cfg.bins_seg), cfg.eps)
                      for w in [reference] + targets]
        ctx_voxel = normalize_voxel(
            voxelize(slice_window(events, t_k, t_k1), cfg.bins), cfg.eps)
        return SampleInputs(guide0=guide0, guide1=guide1, seg_voxels=seg_voxels,
                            ctx_image=normalize_image(image0)[None],
                            ctx_voxel=ctx_voxel,
                            height=events.height, width=events.width)

    # -- refinement pieces ------------------------------------------------------

    def init_state(self, context: Tensor):
        """Hidden state from a pointwise projection of context; zero flow."""
        w, b = self.state_init
        hidden = conv2d(context, w, b).tanh()
        hg, wg = context.shape[1], context.shape[2]
        flow = np.zeros((2, hg, wg), dtype=self.dtype)
        return hidden, flow

    def gru_step(self, hidden: Tensor, motion: Tensor, context: Tensor) -> Tensor:
        """3x3 ConvGRU update: h' = (1-z)*h + z*h_tilde."""
        x = concat_channels([motion, context])
        hx = concat_channels([hidden, x])
        z = conv2d(hx, self.gru_z[0], self.gru_z[1], padding=1).sigmoid()
        r = conv2d(hx, self.gru_r[0], self.gru_r[1], padding=1).sigmoid()
        rhx = concat_channels([r * hidden, x])
        h_tilde = conv2d(rhx, self.gru_h[0], self.gru_h[1], padding=1).tanh()
        one_minus_z = (-z) + 1.0
        return one_minus_z * hidden + z * h_tilde

    def flow_delta(self, hidden: Tensor) -> Tensor:
        h = conv2d(hidden, self.head1[0], self.head1[1], padding=1).relu()
        return conv2d(h, self.head2[0], self.head2[1], padding=1)

    # -- forward --------------------------------------------------------------

    def forward(self, inputs: SampleInputs, iters=None, lazy_corr=False):
        """Run refinement; returns the full-resolution flow of every iteration."""
        cfg = self.config
        if iters is None:
            iters = cfg.iters
        if iters < 1:
            raise ValueError("forward: iters must be >= 1")

        as_t = lambda a: Tensor(np.asarray(a, dtype=self.dtype))
        f1 = self.guide_encoder(as_t(inputs.guide0))
        f2 = self.guide_encoder(as_t(inputs.guide1))
        corr_guide = build_guide_corr(f1, f2, lazy=lazy_corr)
        seg_feats = [self.event_encoder(as_t(v)) for v in inputs.seg_voxels]
        corr_temporal = build_temporal_corr(seg_feats[0], seg_feats[1:], lazy=lazy_corr)

        if cfg.context == "st":
            f_s = self.ctx_spatial(as_t(inputs.ctx_image))
            f_t = self.ctx_temporal(as_t(inputs.ctx_voxel))
            context = self.mix_fusion(f_s, f_t)
        elif cfg.context == "frame":
            context = self.ctx_spatial(as_t(inputs.ctx_image))
        else:
            context = self.ctx_temporal(as_t(inputs.ctx_voxel))

        hidden, flow = self.init_state(context)
        n = cfg.n_targets
        predictions = []
        for _ in range(iters):
            flow_t = Tensor(flow)  # constant for this iteration
            cost_ice = lookup(corr_guide, flow, cfg.radius)
            m_ice = self.motion_ice(cost_ice, flow_t)
            m_events = []
            for i in range(1, n + 1):
                cost_i = linear_lookup(corr_temporal, flow, i, n, cfg.radius)
                m_events.append(self.motion_event(cost_i, flow_t))

            if self.aggregation is not None:
                am_ice, am_events = self.aggregation(
                    m_ice, m_events, self_aggregate=cfg.self_aggregate)
            else:
                am_ice, am_events = m_ice, m_events
            fused = self.fuse(am_ice, am_events)

            hidden = self.gru_step(hidden, fused, context)
            delta = self.flow_delta(hidden)
            flow_graph = Tensor(flow) + delta
            flow = flow_graph.data  # detached accumulator for the next lookup
            predictions.append(upsample_flow(flow_graph, cfg.stride))
        return predictions


def upsample_flow(flow: Tensor, stride: int) -> Tensor:
    """Bilinear x`stride` upsampling with values scaled by `stride`.

    Sampling coordinates are clamped to the source grid (edge replication),
    so a constant (u, v) field maps to a constant (s*u, s*v) field.
    """
    if stride == 1:
        return flow
    _, hg, wg = flow.shape
    h, w = hg * stride, wg * stride
    ys = (np.arange(h, dtype=flow.dtype) + 0.5) / stride - 0.5
    xs = (np.arange(w, dtype=flow.dtype) + 0.5) / stride - 0.5
    ys = np.clip(ys, 0, hg - 1)
    xs = np.clip(xs, 0, wg - 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    coords = Tensor(np.stack([gx, gy]))
    return bilinear_sample(flow, coords) * float(stride)
