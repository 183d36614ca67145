"""Flow accuracy metrics and backward-warp image quality.

EPE is the mean L2 endpoint error over valid pixels; NPE(n) the percentage
of valid pixels with endpoint error above n; AE the mean angle between the
homogeneous vectors (u, v, 1) in degrees. The driving-benchmark outlier
fraction counts pixels with EPE > 3 px or EPE > 5% of the ground-truth
magnitude (the common stricter "and" variant is available via a switch).
Backward warping reconstructs the start frame by sampling the end frame at
x + flow(x); SSIM (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03,
range 255) and PSNR score the reconstruction.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, bilinear_sample, no_grad

PSNR_CAP_DB = 99.0


@dataclass
class MetricReport:
    epe: float
    npe1: float
    npe2: float
    npe3: float
    ae: float
    outlier_pct: float
    ssim: float | None = None
    psnr: float | None = None

    def row(self):
        return [self.epe, self.npe1, self.npe2, self.npe3, self.ae,
                self.outlier_pct, self.ssim, self.psnr]


def _endpoint_errors(pred, gt, valid):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if pred.shape != gt.shape or pred.shape[0] != 2:
        raise ValueError(f"flow shapes disagree: {pred.shape} vs {gt.shape}")
    if valid.shape != pred.shape[1:]:
        raise ValueError("valid mask shape does not match flow")
    if not valid.any():
        raise ValueError("empty valid mask")
    d = pred - gt
    return np.sqrt(d[0] ** 2 + d[1] ** 2)[valid], pred[:, valid], gt[:, valid]


def epe(pred, gt, valid) -> float:
    """Mean endpoint error (pixels) over valid pixels."""
    err, _, _ = _endpoint_errors(pred, gt, valid)
    return float(err.mean())


def npe(pred, gt, valid, n) -> float:
    """Percent of valid pixels with endpoint error strictly above n."""
    err, _, _ = _endpoint_errors(pred, gt, valid)
    return float(100.0 * np.count_nonzero(err > n) / err.size)


def ae(pred, gt, valid) -> float:
    """Mean angular error (degrees) between (u, v, 1) homogeneous vectors."""
    _, p, g = _endpoint_errors(pred, gt, valid)
    dot = p[0] * g[0] + p[1] * g[1] + 1.0
    norm = np.sqrt((p[0] ** 2 + p[1] ** 2 + 1.0) * (g[0] ** 2 + g[1] ** 2 + 1.0))
    cosang = np.clip(dot / norm, -1.0, 1.0)
    return float(np.degrees(np.arccos(cosang)).mean())


def outlier_pct(pred, gt, valid, mode="or") -> float:
    """Percent of valid pixels counted as outliers.

    mode="or" (default): EPE > 3 px OR EPE > 5% of |gt|; mode="and"
    requires both conditions.
    """
    err, _, g = _endpoint_errors(pred, gt, valid)
    mag = np.sqrt(g[0] ** 2 + g[1] ** 2)
    big = err > 3.0
    rel = err > 0.05 * mag
    if mode == "or":
        bad = big | rel
    elif mode == "and":
        bad = big & rel
    else:
        raise ValueError(f"unknown outlier mode: {mode!r}")
    return float(100.0 * np.count_nonzero(bad) / err.size)


def warp_backward(image1, flow) -> np.ndarray:
    """Reconstruct the start frame: out(x) = image1 sampled at x + flow(x)."""
    image1 = np.asarray(image1, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    h, w = image1.shape
    if flow.shape != (2, h, w):
        raise ValueError(f"warp_backward: flow {flow.shape} does not match image {image1.shape}")
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64), indexing="xy")
    coords = np.stack([gx + flow[0], gy + flow[1]])
    with no_grad():
        out = bilinear_sample(Tensor(image1[None]), Tensor(coords))
    return out.data[0]


def _gaussian_kernel(size=11, sigma=1.5):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    k = np.exp(-(r ** 2) / (2 * sigma ** 2))
    k /= k.sum()
    return np.outer(k, k)


def _windowed_mean(img, kernel):
    # 'valid' windows only, matching the classic implementation
    size = kernel.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(img, (size, size))
    return np.einsum("ijkl,kl->ij", win, kernel)


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=255.0) -> float:
    """Mean structural similarity over valid Gaussian windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("ssim: images must share shape")
    if min(a.shape) < window:
        raise ValueError(f"ssim: image smaller than the {window}x{window} window")
    kernel = _gaussian_kernel(window, sigma)
    mu_a = _windowed_mean(a, kernel)
    mu_b = _windowed_mean(b, kernel)
    var_a = _windowed_mean(a * a, kernel) - mu_a ** 2
    var_b = _windowed_mean(b * b, kernel) - mu_b ** 2
    cov = _windowed_mean(a * b, kernel) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def psnr(a, b, data_range=255.0) -> float:
    """10*log10(range^2 / MSE); identical images report the 99 dB cap."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("psnr: images must share shape")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(data_range ** 2 / mse)))


def evaluate_flow(pred, gt, valid, outlier_mode="or") -> MetricReport:
    return MetricReport(
        epe=epe(pred, gt, valid),
        npe1=npe(pred, gt, valid, 1),
        npe2=npe(pred, gt, valid, 2),
        npe3=npe(pred, gt, valid, 3),
        ae=ae(pred, gt, valid),
        outlier_pct=outlier_pct(pred, gt, valid, mode=outlier_mode),
    )


_COLUMNS = ["EPE", "1PE", "2PE", "3PE", "AE", "Outlier%", "SSIM", "PSNR"]


def report_table(named_reports) -> str:
    """Aligned text table; rows are (name, MetricReport), last row aggregate."""
    rows = []
    for name, rep in named_reports:
        cells = ["-" if v is None else f"{v:.3f}" for v in rep.row()]
        rows.append([name] + cells)
    widths = [max(len(r[i]) for r in rows + [["sample"] + _COLUMNS])
              for i in range(len(_COLUMNS) + 1)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(["sample"] + _COLUMNS, widths))]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def report_csv(named_reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["sample"] + _COLUMNS)
    for name, rep in named_reports:
        writer.writerow([name] + ["" if v is None else f"{v:.6g}" for v in rep.row()])
    return buf.getvalue()


def aggregate_reports(reports) -> MetricReport:
    """Unweighted mean of each metric over a report list."""
    def m(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    return MetricReport(
        epe=m([r.epe for r in reports]),
        npe1=m([r.npe1 for r in reports]),
        npe2=m([r.npe2 for r in reports]),
        npe3=m([r.npe3 for r in reports]),
        ae=m([r.ae for r in reports]),
        outlier_pct=m([r.outlier_pct for r in reports]),
        ssim=m([r.ssim for r in reports]),
        psnr=m([r.psnr for r in reports]),
    )
