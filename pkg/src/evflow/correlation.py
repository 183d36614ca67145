"""All-pairs correlation volumes and displacement-window lookups.

The guide volume correlates the two ICE feature maps; the temporal set
correlates the reference event features with each target. Volumes are
(H'W')x(H'W') matrices of dot products scaled by 1/sqrt(D). The lookup
samples, for every source pixel, a (2r+1)^2 window of correlation values
around the position implied by the current flow (bilinear interpolation,
zero outside the grid); the linear lookup scales the displacement by i/N
for the i-th temporal volume.

Volumes are built with a fixed-order rank-1 accumulation kernel so the
dense and lazy (on-the-fly) paths produce bitwise identical lookups.
"""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError, Tensor, _from_op


def _corr_accumulate(f1_tok, f2_tok, gather1=None, gather2=None):
    """sum_l f1[gather1, l] * f2[gather2, l], accumulated in fixed l order.

    Per output element the scalar operation sequence is independent of
    which other elements are computed, which is what makes dense and lazy
    lookups bitwise identical.
    """
    d = f1_tok.shape[1]
    if gather1 is None:
        acc = np.zeros((f1_tok.shape[0], f2_tok.shape[0]), dtype=f1_tok.dtype)
        for l in range(d):
            acc += np.outer(f1_tok[:, l], f2_tok[:, l])
    else:
        acc = np.zeros(gather1.shape, dtype=f1_tok.dtype)
        for l in range(d):
            acc += f1_tok[gather1, l] * f2_tok[gather2, l]
    return acc


def _tokens(fmap: np.ndarray) -> np.ndarray:
    d = fmap.shape[0]
    return np.ascontiguousarray(fmap.reshape(d, -1).T)


def corr_matrix(f1: Tensor, f2: Tensor) -> Tensor:
    """Graph op: (H'W')x(H'W') matrix of scaled all-pairs dot products."""
    if f1.shape != f2.shape or len(f1.shape) != 3:
        raise DimensionError(
            f"corr_matrix: feature maps must share a (D,H,W) shape, "
            f"got {f1.shape} and {f2.shape}")
    d = f1.shape[0]
    scale = 1.0 / np.sqrt(d)
    t1 = _tokens(f1.data)
    t2 = _tokens(f2.data)
    out = _corr_accumulate(t1, t2) * scale
    shape3 = f1.shape

    def backward(g):
        df1 = (g @ t2 * scale).T.reshape(shape3)
        df2 = (g.T @ t1 * scale).T.reshape(shape3)
        return df1, df2

    return _from_op(out, (f1, f2), backward)


class GuideCorrelation:
    """One correlation volume over an H'xW' feature grid.

    Dense mode materializes the full matrix as a graph tensor (gradients
    flow back into the feature maps); lazy mode keeps only the feature
    tokens and computes the values each lookup needs on the fly
    (inference only, bitwise equal to dense).
    """

    def __init__(self, grid_shape, matrix=None, lazy_tokens=None):
        self.grid_shape = grid_shape
        self.matrix = matrix
        self.lazy_tokens = lazy_tokens

    @classmethod
    def build(cls, f1: Tensor, f2: Tensor) -> "GuideCorrelation":
        return cls(f1.shape[1:], matrix=corr_matrix(f1, f2))

    @classmethod
    def build_lazy(cls, f1: Tensor, f2: Tensor) -> "GuideCorrelation":
        if f1.shape != f2.shape or len(f1.shape) != 3:
            raise DimensionError("build_lazy: feature maps must share a (D,H,W) shape")
        scale = 1.0 / np.sqrt(f1.shape[0])
        return cls(f1.shape[1:], lazy_tokens=(_tokens(f1.data), _tokens(f2.data), scale))

    def lookup(self, flow, radius) -> Tensor:
        return lookup(self, flow, radius)


class TemporalCorrelation:
    """Ordered reference-vs-target volumes (entry i-1 pairs V0 with Vi)."""

    def __init__(self, volumes):
        self.volumes = list(volumes)

    def __len__(self):
        return len(self.volumes)

    def __getitem__(self, idx):
        return self.volumes[idx]


def build_guide_corr(f1: Tensor, f2: Tensor, lazy=False) -> GuideCorrelation:
    return GuideCorrelation.build_lazy(f1, f2) if lazy else GuideCorrelation.build(f1, f2)


def build_temporal_corr(f_ref: Tensor, f_targets, lazy=False) -> TemporalCorrelation:
    for f in f_targets:
        if f.shape != f_ref.shape:
            raise DimensionError("build_temporal_corr: all maps must share shape")
    return TemporalCorrelation(
        [build_guide_corr(f_ref, f, lazy=lazy) for f in f_targets])


def _offset_grid(radius, dtype):
    """Offsets ordered row-major: dy outer, dx inner."""
    k = 2 * radius + 1
    dy, dx = np.meshgrid(np.arange(-radius, radius + 1, dtype=dtype),
                         np.arange(-radius, radius + 1, dtype=dtype), indexing="ij")
    return dx.reshape(k * k, 1, 1), dy.reshape(k * k, 1, 1)


def _corner_geometry(flow, radius, grid_shape):
    hg, wg = grid_shape
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != (2, hg, wg):
        raise DimensionError(
            f"lookup: flow shape {flow.shape} does not match grid {(2, hg, wg)}")
    gy, gx = np.meshgrid(np.arange(hg, dtype=flow.dtype),
                         np.arange(wg, dtype=flow.dtype), indexing="ij")
    dx, dy = _offset_grid(radius, flow.dtype)
    tx = gx + flow[0] + dx
    ty = gy + flow[1] + dy
    finite = np.isfinite(tx) & np.isfinite(ty)
    if not finite.all():
        tx = np.where(finite, tx, -1.0)  # non-finite -> out of bounds
        ty = np.where(finite, ty, -1.0)
    inside = (tx >= 0) & (tx <= wg - 1) & (ty >= 0) & (ty <= hg - 1)
    xc = np.clip(tx, 0, wg - 1)
    yc = np.clip(ty, 0, hg - 1)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, wg - 1)
    y1 = np.minimum(y0 + 1, hg - 1)
    fx = xc - x0
    fy = yc - y0
    corners = (y0 * wg + x0, y0 * wg + x1, y1 * wg + x0, y1 * wg + x1)
    weights = ((1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx)
    src = (gy.astype(np.intp) * wg + gx.astype(np.intp))[None]
    return src, corners, weights, inside


def _combine(corner_vals, weights, inside):
    w00, w01, w10, w11 = weights
    v00, v01, v10, v11 = corner_vals
    return (w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11) * inside


def lookup(corr: GuideCorrelation, flow, radius) -> Tensor:
    """Cost map ((2r+1)^2, H', W') sampled around p + flow(p) per pixel p.

    flow is a displacement field in feature-grid pixels and is treated as a
    constant (gradients flow into the correlation values only).
    """
    if radius < 0:
        raise ValueError("lookup: radius must be >= 0")
    flow = flow.data if isinstance(flow, Tensor) else flow
    src, corners, weights, inside = _corner_geometry(flow, radius, corr.grid_shape)

    if corr.lazy_tokens is not None:
        t1, t2, scale = corr.lazy_tokens
        src_b = np.broadcast_to(src, corners[0].shape)
        vals = [_corr_accumulate(t1, t2, src_b, c) * scale for c in corners]
        return Tensor(_combine(vals, weights, inside))

    mat = corr.matrix
    vals = [mat.data[src, c] for c in corners]
    out = _combine(vals, weights, inside)

    def backward(g):
        dmat = np.zeros_like(mat.data)
        w00, w01, w10, w11 = weights
        gm = g * inside
        src_b = np.broadcast_to(src, corners[0].shape)
        np.add.at(dmat, (src_b, corners[0]), gm * w00)
        np.add.at(dmat, (src_b, corners[1]), gm * w01)
        np.add.at(dmat, (src_b, corners[2]), gm * w10)
        np.add.at(dmat, (src_b, corners[3]), gm * w11)
        return (dmat,)

    return _from_op(out, (mat,), backward)


def linear_lookup(corr_t: TemporalCorrelation, flow, i, n, radius) -> Tensor:
    """Lookup in the i-th temporal volume with displacement scaled by i/n."""
    if not (1 <= i <= n):
        raise ValueError(f"linear_lookup: need 1 <= i <= {n}, got {i}")
    flow = flow.data if isinstance(flow, Tensor) else flow
    return lookup(corr_t[i - 1], flow * (i / n), radius)
