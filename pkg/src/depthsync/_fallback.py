"""Pure-numpy versions of the compiled kernels, with identical semantics."""

import numpy as np


def splat_nearest(u, v, z, height, width):
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    z = np.asarray(z, dtype=np.float64)
    zbuf = np.zeros((height, width), dtype=np.float64)
    index = np.full((height, width), -1, dtype=np.int64)
    src = np.flatnonzero((u >= 0) & (v >= 0) & (u < width) & (v < height))
    if src.size == 0:
        return zbuf, index
    dest = v[src] * width + u[src]
    # nearest depth first, then earliest source index
    order = np.lexsort((src, z[src], dest))
    dest_sorted = dest[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = dest_sorted[1:] != dest_sorted[:-1]
    winners = src[order[first]]
    flat_dest = dest_sorted[first]
    zbuf.ravel()[flat_dest] = z[winners]
    index.ravel()[flat_dest] = winners
    return zbuf, index


def joint_bilateral(values, valid, guide, guide_valid, sigma_space, sigma_range, radius):
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    valid = np.asarray(valid, dtype=bool)
    guide = np.asarray(guide, dtype=np.float64)
    guide_valid = np.asarray(guide_valid, dtype=bool)
    use_range = not np.isinf(sigma_range)
    inv_2sr2 = 1.0 / (2.0 * sigma_range * sigma_range) if use_range else 0.0

    r = int(radius)
    pad = ((r, r), (r, r))
    vals_p = np.pad(values, pad)
    usable_p = np.pad(valid & guide_valid, pad)
    guide_p = np.pad(guide, pad)

    num = np.zeros((h, w))
    den = np.zeros((h, w))
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            sl = (slice(r + dy, r + dy + h), slice(r + dx, r + dx + w))
            wgt = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma_space * sigma_space))
            wgt = np.full((h, w), wgt)
            if use_range:
                diff = guide_p[sl] - guide
                wgt = wgt * np.exp(-diff * diff * inv_2sr2)
            wgt = np.where(usable_p[sl], wgt, 0.0)
            num += wgt * vals_p[sl]
            den += wgt
    out = np.zeros((h, w))
    ok = guide_valid & (den >= 1e-12)
    out[ok] = num[ok] / den[ok]
    return out
