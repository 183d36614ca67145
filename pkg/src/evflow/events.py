"""Event stream containers, file formats, windowing, and voxelization.

Events are timestamped polarity spikes (t in integer microseconds, integer
pixel coordinates, polarity +/-1). Streams live in EventWindow objects:
column arrays sorted by time with half-open coverage bounds [t_start,
t_end). Voxelization rasterizes a window into a bins,H,W grid by depositing
each polarity through a triangular kernel along the (normalized) time axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

BINARY_RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1")])


class EventParseError(ValueError):
    """Malformed event file; carries the 1-based offending record index."""

    def __init__(self, message, record_index=None):
        super().__init__(message)
        self.record_index = record_index


class CoordinateError(ValueError):
    """Event coordinates outside the declared sensor size."""


class CoverageError(ValueError):
    """Stream does not cover the requested time span."""


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


@dataclass
class EventWindow:
    """Column-array event storage over a half-open time span.

    Invariants: times are nondecreasing (ties keep input order), every
    event time lies in [t_start, t_end), and coordinates fit the sensor.
    """

    height: int
    width: int
    t: np.ndarray       # uint64 microseconds
    x: np.ndarray       # uint16
    y: np.ndarray       # uint16
    p: np.ndarray       # int8, values in {-1, +1}
    t_start: float
    t_end: float

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.uint64)
        self.x = np.asarray(self.x, dtype=np.uint16)
        self.y = np.asarray(self.y, dtype=np.uint16)
        self.p = np.asarray(self.p, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns must have equal length")
        if n:
            if np.any(np.diff(self.t.astype(np.int64)) < 0):
                order = np.argsort(self.t, kind="stable")
                self.t = self.t[order]
                self.x = self.x[order]
                self.y = self.y[order]
                self.p = self.p[order]
            if np.any(self.x >= self.width) or np.any(self.y >= self.height):
                raise CoordinateError("event coordinates exceed sensor size")
            if not np.all(np.abs(self.p) == 1):
                raise ValueError("polarity must be -1 or +1")
            if self.t[0] < self.t_start or self.t[-1] >= self.t_end:
                raise ValueError("event times outside window bounds")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    @property
    def sensor_size(self):
        return (self.height, self.width)

    @classmethod
    def empty(cls, height, width, t_start=0, t_end=0):
        return cls(height, width, np.empty(0, np.uint64), np.empty(0, np.uint16),
                   np.empty(0, np.uint16), np.empty(0, np.int8), t_start, t_end)


@dataclass
class VoxelGrid:
    """bins,H,W rasterization of an event window."""

    bins: int
    height: int
    width: int
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.bins, self.height, self.width):
            raise ValueError("voxel value array does not match declared shape")


def _window_from_columns(height, width, t, x, y, p):
    if len(t) == 0:
        return EventWindow.empty(height, width)
    return EventWindow(height, width, t, x, y, p,
                       t_start=float(t.min()), t_end=float(t.max()) + 1.0)


def load_events(path, fmt, sensor_size) -> EventWindow:
    """Read an event file. fmt is "csv" or "binary".

    CSV is one `t_us,x,y,p` record per line; binary is packed little-endian
    (t:u64, x:u16, y:u16, p:i8) records with no header. Out-of-range
    coordinates and polarities other than +/-1 are rejected.
    """
    height, width = sensor_size
    if fmt == "csv":
        t_l, x_l, y_l, p_l = [], [], [], []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 4:
                    raise EventParseError(
                        f"{path}: line {lineno}: expected 4 comma-separated fields",
                        record_index=lineno)
                try:
                    t_l.append(int(parts[0]))
                    x_l.append(int(parts[1]))
                    y_l.append(int(parts[2]))
                    p_l.append(int(parts[3]))
                except ValueError as exc:
                    raise EventParseError(
                        f"{path}: line {lineno}: {exc}", record_index=lineno) from exc
        t = np.asarray(t_l, dtype=np.uint64)
        x = np.asarray(x_l, dtype=np.int64)
        y = np.asarray(y_l, dtype=np.int64)
        p = np.asarray(p_l, dtype=np.int64)
    elif fmt == "binary":
        raw = np.fromfile(path, dtype=BINARY_RECORD_DTYPE)
        t = raw["t"].astype(np.uint64)
        x = raw["x"].astype(np.int64)
        y = raw["y"].astype(np.int64)
        p = raw["p"].astype(np.int64)
    else:
        raise ValueError(f"unknown event format: {fmt!r}")

    bad = np.flatnonzero((x < 0) | (x >= width) | (y < 0) | (y >= height))
    if bad.size:
        raise CoordinateError(
            f"{path}: record {bad[0] + 1}: coordinates outside {width}x{height} sensor")
    bad = np.flatnonzero(np.abs(p) != 1)
    if bad.size:
        raise EventParseError(
            f"{path}: record {bad[0] + 1}: polarity must be -1 or 1",
            record_index=int(bad[0]) + 1)

    order = np.argsort(t, kind="stable")
    return _window_from_columns(height, width, t[order],
                                x[order].astype(np.uint16),
                                y[order].astype(np.uint16),
                                p[order].astype(np.int8))


def save_events(path, window: EventWindow, fmt):
    if fmt == "csv":
        with open(path, "w") as fh:
            for i in range(len(window)):
                fh.write(f"{window.t[i]},{window.x[i]},{window.y[i]},{window.p[i]}\n")
    elif fmt == "binary":
        rec = np.empty(len(window), dtype=BINARY_RECORD_DTYPE)
        rec["t"] = window.t
        rec["x"] = window.x
        rec["y"] = window.y
        rec["p"] = window.p
        rec.tofile(path)
    else:
        raise ValueError(f"unknown event format: {fmt!r}")


def slice_window(window: EventWindow, t0, t1) -> EventWindow:
    """Events with t in [t0, t1); the result's bounds are exactly [t0, t1)."""
    if t0 >= t1:
        raise ValueError(f"slice_window: need t0 < t1, got [{t0}, {t1})")
    tf = window.t.astype(np.float64)
    keep = (tf >= t0) & (tf < t1)
    return EventWindow(window.height, window.width,
                       window.t[keep], window.x[keep], window.y[keep], window.p[keep],
                       t_start=t0, t_end=t1)


def segment_reference_targets(window: EventWindow, t_k, t_k1, n):
    """Split a stream into the reference window and n uniform target windows.

    The reference covers [t_k - dt, t_k) and target i covers
    [t_k + (i-1)*dt, t_k + i*dt) with dt = (t_k1 - t_k) / n. The stream's
    declared bounds must cover [t_k - dt, t_k1).
    """
    if t_k >= t_k1:
        raise ValueError("segment_reference_targets: need t_k < t_k1")
    if n < 1:
        raise ValueError("segment_reference_targets: need n >= 1")
    dt = (t_k1 - t_k) / n
    if window.t_start > t_k - dt or window.t_end < t_k1:
        raise CoverageError(
            f"stream covers [{window.t_start}, {window.t_end}) but "
            f"[{t_k - dt}, {t_k1}) is required")
    reference = slice_window(window, t_k - dt, t_k)
    targets = [slice_window(window, t_k + (i - 1) * dt, t_k + i * dt)
               for i in range(1, n + 1)]
    return reference, targets


def voxelize(window: EventWindow, bins) -> VoxelGrid:
    """Rasterize a window into a bins,H,W grid.

    Each event's time is normalized to t* = (bins-1)*(t - t_first)/(t_last -
    t_first) over the window's actual first/last event times (t* = 0 when
    the window has at most one distinct timestamp), then its polarity is
    deposited into the two neighboring bins with triangular weights
    max(0, 1-|b - t*|). Integer pixel coordinates mean each event touches
    only its own spatial column. Accumulation runs in canonical
    (t, y, x, p) order so the result is bitwise reproducible under event
    shuffling.
    """
    if bins < 1:
        raise ValueError("voxelize: need bins >= 1")
    grid = np.zeros((bins, window.height, window.width), dtype=np.float64)
    if len(window) == 0:
        return VoxelGrid(bins, window.height, window.width, grid)

    order = np.lexsort((window.p, window.x, window.y, window.t))
    t = window.t[order].astype(np.float64)
    x = window.x[order].astype(np.intp)
    y = window.y[order].astype(np.intp)
    p = window.p[order].astype(np.float64)

    t_first, t_last = t[0], t[-1]
    if t_last > t_first:
        ts = (bins - 1) * (t - t_first) / (t_last - t_first)
    else:
        ts = np.zeros_like(t)
    b0 = np.floor(ts).astype(np.intp)
    frac = ts - b0

    flat = grid.reshape(bins, -1)
    lin = y * window.width + x
    np.add.at(flat, (b0, lin), p * (1.0 - frac))
    hi = b0 + 1
    ok = hi < bins
    np.add.at(flat, (hi[ok], lin[ok]), p[ok] * frac[ok])
    return VoxelGrid(bins, window.height, window.width, grid)
