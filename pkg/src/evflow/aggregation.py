"""Cross-modal guided aggregation.

Guide (ICE) motion features provide keys and values; each event motion
feature queries them, so spatially stable guide information both steers the
temporal aggregation and fills in where events are sparse. Single head,
single layer, attention over all H'W' feature-grid tokens, residual output:
AM = M + ffn(softmax(Q K^T / sqrt(D)) V).
"""

from __future__ import annotations

import numpy as np

from .checkpoint import ParamStore
from .tensor import Tensor, concat_channels, conv2d, matmul, softmax_rows


def _to_tokens(fmap: Tensor) -> Tensor:
    d = fmap.shape[0]
    return fmap.reshape(d, fmap.shape[1] * fmap.shape[2]).transpose()


def _to_map(tokens: Tensor, grid_shape) -> Tensor:
    h, w = grid_shape
    return tokens.transpose().reshape(tokens.shape[1], h, w)


class GuidedAggregation:
    """Projection, attention, and feed-forward parameters (D_a == D_m)."""

    def __init__(self, store: ParamStore, name: str, d_motion: int):
        self.d = d_motion
        self.w_q = store.weight(f"{name}.w_q", (d_motion, d_motion), fan_in=d_motion)
        self.w_k = store.weight(f"{name}.w_k", (d_motion, d_motion), fan_in=d_motion)
        self.w_v = store.weight(f"{name}.w_v", (d_motion, d_motion), fan_in=d_motion)
        self.ffn1 = store.conv(f"{name}.ffn1", d_motion, d_motion, 1)
        self.ffn2 = store.conv(f"{name}.ffn2", d_motion, d_motion, 1)

    def project_qkv(self, m_ice: Tensor, m_events):
        """Queries for every motion feature; keys/values from the guide only."""
        q_ev = [matmul(_to_tokens(m), self.w_q) for m in m_events]
        guide_tokens = _to_tokens(m_ice)
        q_img = matmul(guide_tokens, self.w_q)
        k = matmul(guide_tokens, self.w_k)
        v = matmul(guide_tokens, self.w_v)
        return q_ev, q_img, k, v

    def aggregate(self, m: Tensor, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        """AM = M + ffn(softmax(Q K^T / sqrt(D)) V) over H'W' tokens."""
        if k.shape[0] != v.shape[0]:
            raise ValueError("aggregate: key and value token counts differ")
        grid_shape = m.shape[1:]
        logits = matmul(q, k.transpose()) * (1.0 / np.sqrt(self.d))
        attended = matmul(softmax_rows(logits), v)
        gathered = _to_map(attended, grid_shape)
        h = conv2d(gathered, self.ffn1[0], self.ffn1[1]).relu()
        return m + conv2d(h, self.ffn2[0], self.ffn2[1])

    def __call__(self, m_ice: Tensor, m_events, self_aggregate=True):
        """Aggregate every event motion feature (and optionally the guide)."""
        q_ev, q_img, k, v = self.project_qkv(m_ice, m_events)
        am_events = [self.aggregate(m, q, k, v) for m, q in zip(m_events, q_ev)]
        am_ice = self.aggregate(m_ice, q_img, k, v) if self_aggregate else m_ice
        return am_ice, am_events


class MotionFuse:
    """Channel-concat of all aggregated features + pointwise projection."""

    def __init__(self, store: ParamStore, name: str, d_motion: int, n_targets: int):
        self.proj = store.conv(f"{name}.proj", d_motion, (n_targets + 1) * d_motion, 1)

    def __call__(self, am_ice: Tensor, am_events) -> Tensor:
        stacked = concat_channels([am_ice] + list(am_events))
        return conv2d(stacked, self.proj[0], self.proj[1])
