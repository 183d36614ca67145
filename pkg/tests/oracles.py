"""Brute-force reference implementations, kept deliberately independent of
the library's vectorized code paths (explicit loops and direct formulas)."""

import numpy as np


def matmul_oracle(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc
    return out


def conv2d_oracle(x, w, bias=None, stride=1, padding=0):
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0 if bias is None else bias[o]
                for c in range(c_in):
                    for di in range(k):
                        for dj in range(k):
                            yy = i * stride + di - padding
                            xx = j * stride + dj - padding
                            if 0 <= yy < h and 0 <= xx < wd:
                                acc += x[c, yy, xx] * w[o, c, di, dj]
                out[o, i, j] = acc
    return out


def bilinear_oracle(src, coords):
    """4-term closed form; coords[0]=x, coords[1]=y; zero outside."""
    c, h, w = src.shape
    _, ho, wo = coords.shape
    out = np.zeros((c, ho, wo))
    for i in range(ho):
        for j in range(wo):
            x, y = coords[0, i, j], coords[1, i, j]
            if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
                continue
            x0, y0 = int(np.floor(x)), int(np.floor(y))
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            fx, fy = x - x0, y - y0
            for ch in range(c):
                out[ch, i, j] = ((1 - fy) * ((1 - fx) * src[ch, y0, x0]
                                             + fx * src[ch, y0, x1])
                                 + fy * ((1 - fx) * src[ch, y1, x0]
                                         + fx * src[ch, y1, x1]))
    return out


def corr_oracle(f1, f2):
    """Double loop over pixel pairs: dot(F1[p], F2[q]) / sqrt(D)."""
    d = f1.shape[0]
    t1 = f1.reshape(d, -1)
    t2 = f2.reshape(d, -1)
    n1, n2 = t1.shape[1], t2.shape[1]
    out = np.zeros((n1, n2))
    for p in range(n1):
        for q in range(n2):
            out[p, q] = float(np.dot(t1[:, p], t2[:, q])) / np.sqrt(d)
    return out


def lookup_oracle(corr, flow, radius):
    """Per-pixel window sampling with the bilinear closed form."""
    hg, wg = flow.shape[1], flow.shape[2]
    k = 2 * radius + 1
    out = np.zeros((k * k, hg, wg))
    for i in range(hg):
        for j in range(wg):
            row = corr[i * wg + j].reshape(hg, wg)
            ch = 0
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    tx = j + flow[0, i, j] + dx
                    ty = i + flow[1, i, j] + dy
                    coord = np.asarray([[[tx]], [[ty]]])
                    out[ch, i, j] = bilinear_oracle(row[None], coord)[0, 0, 0]
                    ch += 1
    return out


def voxelize_oracle(ts, xs, ys, ps, bins, height, width):
    """Direct per-event kernel-product deposition over the full grid."""
    grid = np.zeros((bins, height, width))
    ts = np.asarray(ts, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    ps = np.asarray(ps, dtype=np.int64)
    if len(ts) == 0:
        return grid
    t0, t1 = ts.min(), ts.max()
    for t, x, y, p in zip(ts, xs, ys, ps):
        tstar = (bins - 1) * (t - t0) / (t1 - t0) if t1 > t0 else 0.0
        for b in range(bins):
            for yy in range(height):
                for xx in range(width):
                    kb = max(0.0, 1 - abs(xx - x)) * max(0.0, 1 - abs(yy - y)) \
                        * max(0.0, 1 - abs(b - tstar))
                    if kb:
                        grid[b, yy, xx] += p * kb
    return grid


def ssim_oracle(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=255.0):
    """Direct windowed-statistics evaluation with an explicit Gaussian."""
    r = np.arange(window) - (window - 1) / 2
    g1 = np.exp(-(r ** 2) / (2 * sigma ** 2))
    kern = np.outer(g1, g1)
    kern /= kern.sum()
    h, w = a.shape
    half = window // 2
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    vals = []
    for i in range(half, h - half):
        for j in range(half, w - half):
            wa = a[i - half:i + half + 1, j - half:j + half + 1]
            wb = b[i - half:i + half + 1, j - half:j + half + 1]
            mu_a = (wa * kern).sum()
            mu_b = (wb * kern).sum()
            var_a = (wa * wa * kern).sum() - mu_a ** 2
            var_b = (wb * wb * kern).sum() - mu_b ** 2
            cov = (wa * wb * kern).sum() - mu_a * mu_b
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(vals))
