"""Slow, obviously-correct reference implementations used as test oracles."""

import math

import numpy as np


def splat_loop(u, v, z, height, width):
    zbuf = np.zeros((height, width))
    index = np.full((height, width), -1, dtype=np.int64)
    for k in range(len(u)):
        if not (0 <= u[k] < width and 0 <= v[k] < height):
            continue
        cur = index[v[k], u[k]]
        if cur < 0 or z[k] < z[cur]:
            index[v[k], u[k]] = k
            zbuf[v[k], u[k]] = z[k]
    return zbuf, index


def weighted_mean_loop(values, valid, guide, guide_valid, sigma_s, sigma_r, radius):
    """Per-pixel double loop over the window."""
    h, w = values.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            if not guide_valid[y, x]:
                continue
            num = den = 0.0
            for yy in range(max(0, y - radius), min(h, y + radius + 1)):
                for xx in range(max(0, x - radius), min(w, x + radius + 1)):
                    if not (valid[yy, xx] and guide_valid[yy, xx]):
                        continue
                    wt = math.exp(-((yy - y) ** 2 + (xx - x) ** 2) / (2 * sigma_s ** 2))
                    if math.isfinite(sigma_r):
                        wt *= math.exp(-(guide[yy, xx] - guide[y, x]) ** 2 / (2 * sigma_r ** 2))
                    num += wt * values[yy, xx]
                    den += wt
            if den >= 1e-12:
                out[y, x] = num / den
    return out


def bilateral_loop(d, sigma_s, sigma_r, radius):
    return weighted_mean_loop(d, d > 0, d, d > 0, sigma_s, sigma_r, radius)


def gaussian_loop(d, sigma_s, radius):
    ones = np.ones(d.shape, dtype=bool)
    return weighted_mean_loop(d, d > 0, np.zeros(d.shape), ones, sigma_s, math.inf, radius)


def jbf_loop(d, gray, sigma_s, sigma_r, radius):
    ones = np.ones(d.shape, dtype=bool)
    return weighted_mean_loop(d, d > 0, gray, ones, sigma_s, sigma_r, radius)


def rgf_loop(d, sigma_s, sigma_r, radius, iterations):
    out = gaussian_loop(d, sigma_s, radius)
    for _ in range(iterations - 1):
        out = weighted_mean_loop(d, d > 0, out, out > 0, sigma_s, sigma_r, radius)
    return out


def masked_l1_loop(pred, gt, m, m_seg):
    total, n = 0.0, 0
    for y in range(gt.shape[0]):
        for x in range(gt.shape[1]):
            if m[y, x] and m_seg[y, x]:
                total += abs(float(pred[y, x]) - float(gt[y, x]))
                n += 1
    return total / n if n else 0.0


def masked_mse_loop(pred, gt, m, m_seg):
    total, n = 0.0, 0
    for y in range(gt.shape[0]):
        for x in range(gt.shape[1]):
            if m[y, x] and m_seg[y, x]:
                e = (float(pred[y, x]) - float(gt[y, x])) * 1000.0
                total += e * e
                n += 1
    return total / n if n else 0.0


def argmin_match(t_lq, t_hq, delta_us):
    """Nearest HQ index for every LQ stamp by exhaustive search; ties to the lower index."""
    out = []
    for t in t_lq:
        gaps = [abs(t - (h + delta_us)) for h in t_hq]
        out.append(int(np.argmin(gaps)))
    return out


def central_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g
