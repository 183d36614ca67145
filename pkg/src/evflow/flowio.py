"""Flow and image file formats plus color-wheel flow rendering.

Flow files use the classic layout: float32 magic 202021.25, little-endian
int32 width and height, then row-major interleaved (u, v) float32 pairs.
Invalid pixels are stored as values above 1e9; the exact mask travels in a
`<path>.valid.pgm` sidecar (255 = valid). Images are binary PGM (P5) for
grayscale and PPM (P6) for color.
"""

from __future__ import annotations

import os

import numpy as np

FLO_MAGIC = 202021.25
INVALID_FLOW = 1e10
INVALID_THRESHOLD = 1e9


def write_pgm(path, image):
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError("write_pgm expects a 2-d array")
    arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        fh.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported")
    pos += 1  # single whitespace after maxval
    img = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return img.reshape(height, width).astype(np.float64)


def write_ppm(path, rgb):
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("write_ppm expects an H,W,3 array")
    arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        fh.write(arr.tobytes())


def write_flo(path, flow, valid=None):
    """Write a 2,H,W flow field; invalid pixels become sentinel values."""
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError("write_flo expects a (2,H,W) array")
    _, h, w = flow.shape
    out = flow.copy()
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        out[:, ~valid] = INVALID_FLOW
    with open(path, "wb") as fh:
        np.asarray([FLO_MAGIC], dtype="<f4").tofile(fh)
        np.asarray([w, h], dtype="<i4").tofile(fh)
        np.ascontiguousarray(out.transpose(1, 2, 0), dtype="<f4").tofile(fh)
    if valid is not None:
        write_pgm(str(path) + ".valid.pgm", valid.astype(np.uint8) * 255)


def read_flo(path):
    """Read a flow file; returns (flow (2,H,W) float64, valid (H,W) bool)."""
    with open(path, "rb") as fh:
        magic = np.fromfile(fh, dtype="<f4", count=1)
        if magic.size != 1 or magic[0] != np.float32(FLO_MAGIC):
            raise ValueError(f"{path}: bad flow file magic")
        w, h = np.fromfile(fh, dtype="<i4", count=2)
        data = np.fromfile(fh, dtype="<f4", count=2 * w * h)
    flow = data.reshape(h, w, 2).transpose(2, 0, 1).astype(np.float64)
    sidecar = str(path) + ".valid.pgm"
    if os.path.exists(sidecar):
        valid = read_pgm(sidecar) > 127
    else:
        valid = np.all(np.abs(flow) < INVALID_THRESHOLD, axis=0)
    flow[:, ~valid] = 0.0
    return flow, valid


def flow_to_color(flow, max_magnitude=None) -> np.ndarray:
    """Color-wheel rendering: hue = direction, saturation = |flow| / max.

    Returns H,W,3 uint8. A zero field renders uniform white (saturation 0).
    """
    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[0], flow[1]
    mag = np.sqrt(u ** 2 + v ** 2)
    scale = max_magnitude if max_magnitude else mag.max()
    sat = mag / scale if scale > 0 else np.zeros_like(mag)
    sat = np.clip(sat, 0, 1)
    hue = (np.arctan2(-v, -u) / np.pi + 1.0) / 2.0  # [0,1), matches wheel convention
    h6 = hue * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    val = np.ones_like(sat)
    p = val * (1 - sat)
    q = val * (1 - sat * f)
    t = val * (1 - sat * (1 - f))
    r = np.choose(i, [val, q, p, p, t, val])
    g = np.choose(i, [t, val, val, q, p, p])
    b = np.choose(i, [p, p, t, val, val, q])
    return np.clip(np.rint(np.stack([r, g, b], axis=-1) * 255), 0, 255).astype(np.uint8)
