"""Synthetic scenes: paired frames, event streams, and ground-truth flow.

A scene is a band-limited random texture on a padded canvas, moved by an
exact parametric motion (translation, rotation about the center, or a mild
affinity). Both frames sample the same canvas, so brightness constancy
holds to interpolation error and the flow is known in closed form. Events
come from a per-pixel contrast-threshold model on log intensity, evaluated
on a dense stack of intermediate frames.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .events import EventWindow, save_events, load_events, slice_window
from .flowio import read_flo, read_pgm, write_flo, write_pgm

DEFAULT_CONTRAST = 0.15
DEFAULT_SUBSTEPS = 32
LOOKUP_REACH = 32.0  # radius 4 at stride 8
MOTION_MODELS = ("translation", "rotation", "affine")


@dataclass
class SynthConfig:
    height: int = 32
    width: int = 32
    motion: str = "translation"      # one model name, or "mixed"
    max_disp: float = 5.0
    contrast: float = DEFAULT_CONTRAST
    noise_rate: float = 0.0          # expected noise events per pixel
    intensity_lo: float = 30.0
    intensity_hi: float = 225.0
    n_targets: int = 5
    interval_us: int = 100_000
    substeps: int = DEFAULT_SUBSTEPS
    texture_sigma: float = 2.0
    event_format: str = "csv"


@dataclass
class SyntheticSample:
    image0: np.ndarray            # float intensities, before quantization
    image1: np.ndarray
    events: EventWindow           # covers [t_k - dt, t_k1)
    flow_gt: np.ndarray           # (2,H,W)
    valid: np.ndarray             # (H,W) bool
    t_k: int
    t_k1: int
    meta: dict = field(default_factory=dict)


class _Motion:
    """Time-parameterized rigid/affine motion; tau in [0,1] spans the interval."""

    def __init__(self, kind, params, center):
        self.kind = kind
        self.params = params
        self.center = np.asarray(center, dtype=np.float64)

    def displacement(self, xy, tau):
        """Forward displacement of points xy (2,...) at time fraction tau."""
        cx, cy = self.center
        x, y = xy[0] - cx, xy[1] - cy
        if self.kind == "translation":
            u, v = self.params
            return np.broadcast_to(
                np.asarray([tau * u, tau * v])[:, None, None], xy.shape).copy()
        if self.kind == "rotation":
            th = tau * self.params[0]
            c, s = np.cos(th), np.sin(th)
            return np.stack([c * x - s * y - x, s * x + c * y - y])
        a11, a12, a21, a22, tx, ty = self.params
        return np.stack([tau * (a11 * x + a12 * y + tx),
                         tau * (a21 * x + a22 * y + ty)])

    def inverse_positions(self, xy, tau):
        """Source positions whose forward motion lands on xy at time tau."""
        cx, cy = self.center
        x, y = xy[0] - cx, xy[1] - cy
        if self.kind == "translation":
            u, v = self.params
            return np.stack([xy[0] - tau * u, xy[1] - tau * v])
        if self.kind == "rotation":
            th = tau * self.params[0]
            c, s = np.cos(th), np.sin(th)
            return np.stack([c * x + s * y + cx, -s * x + c * y + cy])
        a11, a12, a21, a22, tx, ty = self.params
        m = np.asarray([[1 + tau * a11, tau * a12], [tau * a21, 1 + tau * a22]])
        minv = np.linalg.inv(m)
        px = x - tau * tx
        py = y - tau * ty
        return np.stack([minv[0, 0] * px + minv[0, 1] * py + cx,
                         minv[1, 0] * px + minv[1, 1] * py + cy])


def _draw_motion(rng, kind, max_disp, height, width) -> _Motion:
    center = ((width - 1) / 2.0, (height - 1) / 2.0)
    if max_disp == 0:
        return _Motion("translation", (0.0, 0.0), center)
    if kind == "translation":
        ang = rng.uniform(0, 2 * np.pi)
        mag = rng.uniform(0.25, 1.0) * max_disp
        return _Motion(kind, (mag * np.cos(ang), mag * np.sin(ang)), center)
    if kind == "rotation":
        r_corner = np.hypot(center[0], center[1])
        th_max = max_disp / max(r_corner, 1.0)
        th = rng.choice([-1.0, 1.0]) * rng.uniform(0.25, 1.0) * th_max
        return _Motion(kind, (th,), center)
    if kind == "affine":
        lin = rng.uniform(-0.5, 0.5, size=4) * max_disp / max(width, height)
        trans = rng.uniform(-0.5, 0.5, size=2) * max_disp
        motion = _Motion(kind, (*lin, *trans), center)
        corners = np.asarray([[0, width - 1, 0, width - 1],
                              [0, 0, height - 1, height - 1]], dtype=np.float64)
        peak = np.sqrt((motion.displacement(corners[:, :, None], 1.0) ** 2)
                       .sum(axis=0)).max()
        if peak > 0:
            scale = rng.uniform(0.25, 1.0) * max_disp / peak
            motion.params = tuple(p * scale for p in motion.params)
        return motion
    raise ValueError(f"unknown motion model: {kind!r}")


def _sample_canvas(canvas, positions):
    """Bilinear read of the padded canvas at float positions (2,H,W)."""
    h, w = canvas.shape
    x = np.clip(positions[0], 0, w - 1)
    y = np.clip(positions[1], 0, h - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    return ((1 - fy) * ((1 - fx) * canvas[y0, x0] + fx * canvas[y0, x1])
            + fy * ((1 - fx) * canvas[y1, x0] + fx * canvas[y1, x1]))


def simulate_events(frames, times_us, contrast) -> EventWindow:
    """Contrast-threshold event simulation over a frame stack.

    Per pixel, log(I+1) is tracked against a reference level; every time it
    moves a further `contrast` away from the reference, one event is
    emitted at the linearly interpolated crossing time (rounded to integer
    microseconds) and the reference jumps to the crossed level. Frames are
    (S,H,W) intensities at the (S,) times; S >= 2 and contrast > 0.
    """
    frames = np.asarray(frames, dtype=np.float64)
    times = np.asarray(times_us, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] != times.shape[0] or frames.shape[0] < 2:
        raise ValueError("simulate_events: need an (S,H,W) stack with S>=2 times")
    if contrast <= 0:
        raise ValueError("simulate_events: contrast must be positive")
    s, height, width = frames.shape
    logi = np.log(frames + 1.0).reshape(s, -1)
    ref = logi[0].copy()
    # tolerance forgives float error when a ramp hits a threshold exactly
    tol = 1e-9
    out_t, out_xy, out_p = [], [], []
    for j in range(s - 1):
        la, lb = logi[j], logi[j + 1]
        ta, tb = times[j], times[j + 1]
        diff = lb - ref
        for sign in (1.0, -1.0):
            count = np.floor(sign * diff / contrast + tol).astype(np.int64)
            np.clip(count, 0, None, out=count)
            sel = np.flatnonzero(count)
            if sel.size == 0:
                continue
            reps = count[sel]
            rep_idx = np.repeat(sel, reps)
            starts = np.cumsum(reps) - reps
            m = np.arange(reps.sum()) - np.repeat(starts, reps) + 1
            l_cross = ref[rep_idx] + sign * m * contrast
            denom = lb[rep_idx] - la[rep_idx]
            t_ev = ta + (l_cross - la[rep_idx]) / denom * (tb - ta)
            out_t.append(t_ev)
            out_xy.append(rep_idx)
            out_p.append(np.full(rep_idx.shape, sign, dtype=np.int8))
            ref[sel] += sign * reps * contrast
    if not out_t:
        return EventWindow.empty(height, width,
                                 t_start=float(np.floor(times[0])),
                                 t_end=float(times[-1]) + 1.0)
    t = np.rint(np.concatenate(out_t)).astype(np.uint64)
    idx = np.concatenate(out_xy)
    p = np.concatenate(out_p)
    order = np.argsort(t, kind="stable")
    return EventWindow(height, width, t[order],
                       (idx % width).astype(np.uint16)[order],
                       (idx // width).astype(np.uint16)[order],
                       p[order],
                       t_start=float(np.floor(times[0])),
                       t_end=float(times[-1]) + 1.0)


def gen_scene(seed, height, width, motion="translation", max_disp=5.0,
              contrast=DEFAULT_CONTRAST, noise_rate=0.0,
              intensity_lo=30.0, intensity_hi=225.0,
              n_targets=5, interval_us=100_000,
              substeps=DEFAULT_SUBSTEPS, texture_sigma=2.0) -> SyntheticSample:
    """One synthetic sample: frames, events, exact flow, validity mask."""
    if max_disp > LOOKUP_REACH:
        raise ValueError(
            f"max_disp {max_disp} exceeds the {LOOKUP_REACH} px lookup reach")
    if max_disp < 0:
        raise ValueError("max_disp must be nonnegative")
    if motion not in MOTION_MODELS and motion != "mixed":
        raise ValueError(f"unknown motion model: {motion!r}")
    rng = np.random.default_rng(seed)
    kind = motion if motion != "mixed" else \
        MOTION_MODELS[rng.integers(len(MOTION_MODELS))]
    mdl = _draw_motion(rng, kind, max_disp, height, width)

    margin = int(np.ceil(max_disp)) + 3
    canvas = gaussian_filter(rng.standard_normal((height + 2 * margin,
                                                  width + 2 * margin)),
                             sigma=texture_sigma)
    lo, hi = canvas.min(), canvas.max()
    canvas = (canvas - lo) / max(hi - lo, 1e-12) * (intensity_hi - intensity_lo) \
        + intensity_lo

    gx, gy = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64), indexing="xy")
    grid = np.stack([gx, gy])

    def frame_at(tau):
        pos = mdl.inverse_positions(grid, tau)
        return _sample_canvas(canvas, pos + margin)

    t_k = interval_us
    t_k1 = 2 * interval_us
    dt = interval_us / n_targets
    # one extra lead-in segment gives the simulated sensor history before
    # the reference span; its events are discarded by the final slice
    tau0 = -2.0 / n_targets
    n_sub = max(2, int(round(substeps * (1.0 - tau0))))
    taus = np.linspace(tau0, 1.0, n_sub + 1)
    stack = np.stack([frame_at(tau) for tau in taus])
    times = t_k + taus * interval_us
    events = simulate_events(stack, times, contrast)

    if noise_rate > 0:
        n_noise = int(rng.poisson(noise_rate * height * width))
        span_lo, span_hi = int(np.ceil(t_k - dt)), t_k1
        nt = rng.integers(span_lo, span_hi, size=n_noise).astype(np.uint64)
        nx = rng.integers(0, width, size=n_noise).astype(np.uint16)
        ny = rng.integers(0, height, size=n_noise).astype(np.uint16)
        npol = rng.choice(np.asarray([-1, 1], dtype=np.int8), size=n_noise)
        t_all = np.concatenate([events.t, nt])
        order = np.argsort(t_all, kind="stable")
        events = EventWindow(height, width, t_all[order],
                             np.concatenate([events.x, nx])[order],
                             np.concatenate([events.y, ny])[order],
                             np.concatenate([events.p, npol])[order],
                             t_start=min(events.t_start, span_lo),
                             t_end=events.t_end)
    events = slice_window(events, t_k - dt, t_k1)

    flow_gt = mdl.displacement(grid, 1.0)
    tx, ty = gx + flow_gt[0], gy + flow_gt[1]
    valid = (tx >= 0) & (tx <= width - 1) & (ty >= 0) & (ty <= height - 1)
    meta = {
        "height": height, "width": width, "t_k": t_k, "t_k1": t_k1,
        "n_targets": n_targets, "contrast": contrast, "motion": kind,
        "params": ",".join(f"{p:.17g}" for p in mdl.params),
        "max_disp": max_disp, "noise_rate": noise_rate, "seed": seed,
    }
    return SyntheticSample(image0=frame_at(0.0), image1=frame_at(1.0),
                           events=events, flow_gt=flow_gt, valid=valid,
                           t_k=t_k, t_k1=t_k1, meta=meta)


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------


def write_sample(sample_dir, sample: SyntheticSample, event_format="csv"):
    os.makedirs(sample_dir, exist_ok=True)
    write_pgm(os.path.join(sample_dir, "image0.pgm"), sample.image0)
    write_pgm(os.path.join(sample_dir, "image1.pgm"), sample.image1)
    ev_name = "events.csv" if event_format == "csv" else "events.bin"
    save_events(os.path.join(sample_dir, ev_name), sample.events, event_format)
    write_flo(os.path.join(sample_dir, "flow_gt.flo"), sample.flow_gt, sample.valid)
    with open(os.path.join(sample_dir, "meta.txt"), "w") as fh:
        for key, value in sample.meta.items():
            fh.write(f"{key}={value}\n")


def read_meta(path):
    meta = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, value = line.split("=", 1)
            meta[key] = value
    return meta


def load_sample(sample_dir):
    """Read one sample directory back into memory."""
    meta = read_meta(os.path.join(sample_dir, "meta.txt"))
    height, width = int(meta["height"]), int(meta["width"])
    image0 = read_pgm(os.path.join(sample_dir, "image0.pgm"))
    image1 = read_pgm(os.path.join(sample_dir, "image1.pgm"))
    csv_path = os.path.join(sample_dir, "events.csv")
    if os.path.exists(csv_path):
        events = load_events(csv_path, "csv", (height, width))
    else:
        events = load_events(os.path.join(sample_dir, "events.bin"), "binary",
                             (height, width))
    dt = (int(meta["t_k1"]) - int(meta["t_k"])) / int(meta.get("n_targets", 5))
    events = EventWindow(height, width, events.t, events.x, events.y, events.p,
                         t_start=int(meta["t_k"]) - dt, t_end=int(meta["t_k1"]))
    flow_gt, valid = read_flo(os.path.join(sample_dir, "flow_gt.flo"))
    return {"name": os.path.basename(os.path.normpath(sample_dir)),
            "image0": image0, "image1": image1, "events": events,
            "flow_gt": flow_gt, "valid": valid,
            "t_k": int(meta["t_k"]), "t_k1": int(meta["t_k1"]), "meta": meta}


def gen_dataset(seed, count, out_dir, cfg: SynthConfig | None = None):
    """Write `count` samples plus a manifest; reproducible from the seed."""
    cfg = cfg or SynthConfig()
    os.makedirs(out_dir, exist_ok=True)
    names = []
    child_seeds = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint64)
    for i, child in enumerate(child_seeds):
        name = f"{i:05d}"
        sample = gen_scene(int(child), cfg.height, cfg.width, motion=cfg.motion,
                           max_disp=cfg.max_disp, contrast=cfg.contrast,
                           noise_rate=cfg.noise_rate,
                           intensity_lo=cfg.intensity_lo,
                           intensity_hi=cfg.intensity_hi,
                           n_targets=cfg.n_targets, interval_us=cfg.interval_us,
                           substeps=cfg.substeps, texture_sigma=cfg.texture_sigma)
        write_sample(os.path.join(out_dir, name), sample, cfg.event_format)
        names.append(name)
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.writelines(name + "\n" for name in names)
    return names


def load_dataset(dataset_dir):
    """Load every sample listed in the manifest, in manifest order."""
    with open(os.path.join(dataset_dir, "manifest.txt")) as fh:
        names = [line.strip() for line in fh if line.strip()]
    return [load_sample(os.path.join(dataset_dir, name)) for name in names]
