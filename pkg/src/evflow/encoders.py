"""Feature encoders: strided conv stacks, the mix-fusion context block, and
the motion-feature encoder applied to sampled correlation costs.

All encoders output maps at 1/stride resolution. The guide encoder is one
parameter set shared by both ICE inputs; the event encoder is shared by the
reference and every target segment.
"""

from __future__ import annotations

import numpy as np

from .checkpoint import ParamStore
from .tensor import Tensor, concat_channels, conv2d

# per-stage widths leading up to the output channel count; one stage per
# factor-of-two reduction, so stride 8 -> 3 strided convs
_STAGE_WIDTHS = {1: [], 2: [16], 4: [16, 24], 8: [16, 24, 32]}


class ConvStack:
    """Strided conv encoder with a residual tail at the output resolution."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, stride: int):
        self.stride = stride
        widths = [min(w, c_out) for w in _STAGE_WIDTHS[stride]]
        self.stages = []
        prev = c_in
        for i, w in enumerate(widths):
            self.stages.append(store.conv(f"{name}.stage{i}", w, prev, 3))
            prev = w
        self.proj = store.conv(f"{name}.proj", c_out, prev, 3)
        self.res1 = store.conv(f"{name}.res1", c_out, c_out, 3)
        self.res2 = store.conv(f"{name}.res2", c_out, c_out, 3)

    def __call__(self, x: Tensor) -> Tensor:
        h, w = x.shape[1], x.shape[2]
        if h % self.stride or w % self.stride:
            raise ValueError(f"input {h}x{w} not divisible by stride {self.stride}")
        out = x
        for wt, b in self.stages:
            out = conv2d(out, wt, b, stride=2, padding=1).relu()
        wt, b = self.proj
        out = conv2d(out, wt, b, stride=1, padding=1).relu()
        r = conv2d(out, self.res1[0], self.res1[1], stride=1, padding=1).relu()
        r = conv2d(r, self.res2[0], self.res2[1], stride=1, padding=1)
        return (out + r).relu()


class MixFusion:
    """Spatiotemporal context fusion.

    Concatenated spatial+temporal context goes through a shared pointwise
    layer, then a 3x3 conv + pointwise branch is added back onto the shared
    output; channel count matches each single-modality input.
    """

    def __init__(self, store: ParamStore, name: str, d_ctx: int):
        self.mlp_in = store.conv(f"{name}.mlp_in", d_ctx, 2 * d_ctx, 1)
        self.conv3 = store.conv(f"{name}.conv3", d_ctx, d_ctx, 3)
        self.mlp_out = store.conv(f"{name}.mlp_out", d_ctx, d_ctx, 1)

    def __call__(self, f_s: Tensor, f_t: Tensor) -> Tensor:
        if f_s.shape != f_t.shape:
            raise ValueError("mix_fusion: context maps must share shape")
        h = concat_channels([f_s, f_t])
        m = conv2d(h, self.mlp_in[0], self.mlp_in[1])
        branch = conv2d(m, self.conv3[0], self.conv3[1], padding=1)
        branch = conv2d(branch, self.mlp_out[0], self.mlp_out[1])
        return branch + m


class MotionEncoder:
    """Two conv layers over [sampled costs, current flow] concat."""

    def __init__(self, store: ParamStore, name: str, cost_channels: int, d_motion: int):
        self.cost_channels = cost_channels
        self.conv1 = store.conv(f"{name}.conv1", d_motion, cost_channels + 2, 3)
        self.conv2 = store.conv(f"{name}.conv2", d_motion, d_motion, 3)

    def __call__(self, cost: Tensor, flow: Tensor) -> Tensor:
        if cost.shape[0] != self.cost_channels:
            raise ValueError(
                f"motion encoder expects {self.cost_channels} cost channels, "
                f"got {cost.shape[0]}")
        x = concat_channels([cost, flow])
        x = conv2d(x, self.conv1[0], self.conv1[1], padding=1).relu()
        return conv2d(x, self.conv2[0], self.conv2[1], padding=1).relu()


def to_tensor(arr, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype))
