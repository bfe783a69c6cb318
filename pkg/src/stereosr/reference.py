"""Slow loop-by-loop reference implementations.

These exist only to cross-check the vectorised kernels. Each one follows
the defining formula literally in float64 and shares no code with the
module it checks.
"""

import math

import numpy as np


def conv2d(x, kernel, bias, groups=1):
    h, w, cin = x.shape
    k, _, cin_g, cout = kernel.shape
    cout_g = cout // groups
    p = (k - 1) // 2
    out = np.zeros((h, w, cout))
    for i in range(h):
        for j in range(w):
            for o in range(cout):
                g = o // cout_g
                acc = float(bias[o])
                for dy in range(k):
                    for dx in range(k):
                        y, xx = i + dy - p, j + dx - p
                        if 0 <= y < h and 0 <= xx < w:
                            for c in range(cin_g):
                                acc += float(x[y, xx, g * cin_g + c]) * float(kernel[dy, dx, c, o])
                out[i, j, o] = acc
    return out


def batch_matmul(a, b):
    n, p, q = a.shape
    r = b.shape[2]
    out = np.zeros((n, p, r))
    for h in range(n):
        for i in range(p):
            for j in range(r):
                out[h, i, j] = sum(float(a[h, i, k]) * float(b[h, k, j]) for k in range(q))
    return out


def softmax(row):
    e = [math.exp(float(v)) for v in row]
    s = sum(e)
    return np.array([v / s for v in e])


def cycle_probability(m_rl, m_lr, delta_max=0):
    h, w, _ = m_rl.shape
    out = np.zeros((h, w))
    for i in range(h):
        for w1 in range(w):
            acc = 0.0
            for d in range(-delta_max, delta_max + 1):
                if not 0 <= w1 + d < w:
                    continue
                for w2 in range(w):
                    acc += float(m_rl[i, w1 + d, w2]) * float(m_lr[i, w2, w1])
            out[i, w1] = acc
    return out


def warp(m, x):
    """y[h, i] = sum_j m[h, i, j] x[h, j]."""
    h, w, c = x.shape
    out = np.zeros((h, w, c))
    for i in range(h):
        for a in range(w):
            for b in range(w):
                out[i, a] += float(m[i, a, b]) * x[i, b].astype(np.float64)
    return out


def masked_l1(v, a, b):
    h, w, c = a.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            for k in range(c):
                total += abs(float(v[i, j]) * (float(a[i, j, k]) - float(b[i, j, k])))
    return total / (h * w * c)


def photometric_loss(x_l, x_r, m_rl, m_lr, v_l, v_r):
    return (masked_l1(v_l, x_l, warp(m_rl, x_r))
            + masked_l1(v_r, x_r, warp(m_lr, x_l)))


def cycle_loss(x_l, x_r, m_rl, m_lr, v_l, v_r):
    return (masked_l1(v_l, x_l, warp(m_rl, warp(m_lr, x_l)))
            + masked_l1(v_r, x_r, warp(m_lr, warp(m_rl, x_r))))


def smoothness_loss(maps):
    total = 0.0
    for m in maps:
        h, w, _ = m.shape
        vert, n_vert = 0.0, 0
        diag, n_diag = 0.0, 0
        for i in range(h):
            for j in range(w):
                for k in range(w):
                    if i + 1 < h:
                        vert += abs(float(m[i, j, k]) - float(m[i + 1, j, k]))
                        n_vert += 1
                    if j + 1 < w and k + 1 < w:
                        diag += abs(float(m[i, j, k]) - float(m[i, j + 1, k + 1]))
                        n_diag += 1
        total += (vert / n_vert if n_vert else 0.0) + (diag / n_diag if n_diag else 0.0)
    return total


def l1_mean(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return sum(abs(x - y) for x, y in zip(a, b)) / a.size


def cubic(x, a=-0.5):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x**3 - (a + 3) * x**2 + 1
    if x < 2:
        return a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a
    return 0.0


def bicubic_sample(channel, y, x, kscale=1.0):
    """Value of a 2-D array at continuous (y, x) under the clamped cubic kernel."""
    h, w = channel.shape
    support = 2.0 / kscale
    acc = 0.0
    wsum = 0.0
    for j in range(math.floor(y - support), math.ceil(y + support) + 1):
        wy = kscale * cubic(kscale * (y - j))
        if wy == 0:
            continue
        for i in range(math.floor(x - support), math.ceil(x + support) + 1):
            wx = kscale * cubic(kscale * (x - i))
            if wx == 0:
                continue
            acc += wy * wx * float(channel[min(max(j, 0), h - 1), min(max(i, 0), w - 1)])
            wsum += wy * wx
    return acc / wsum


def psnr(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    mse = sum((x - y) ** 2 for x, y in zip(a, b)) / a.size
    return 10 * math.log10(1 / mse)


def ssim_channel(x, y, size=11, sigma=1.5, k1=0.01, k2=0.03):
    c = (size - 1) / 2
    g = [[math.exp(-((i - c) ** 2 + (j - c) ** 2) / (2 * sigma * sigma)) for j in range(size)]
         for i in range(size)]
    gs = sum(map(sum, g))
    g = [[v / gs for v in row] for row in g]
    c1, c2 = k1 * k1, k2 * k2
    h, w = x.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            mx = my = 0.0
            for a in range(size):
                for b in range(size):
                    mx += g[a][b] * x[i + a, j + b]
                    my += g[a][b] * y[i + a, j + b]
            vx = vy = cxy = 0.0
            for a in range(size):
                for b in range(size):
                    dx = x[i + a, j + b] - mx
                    dy = y[i + a, j + b] - my
                    vx += g[a][b] * dx * dx
                    vy += g[a][b] * dy * dy
                    cxy += g[a][b] * dx * dy
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)


def ssim(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return sum(ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[2])) / a.shape[2]


def leaky(v, slope=0.1):
    return v if v >= 0 else slope * v


def rdb_pixel(x, convs, fuse):
    """Residual dense block on a single pixel (1 x 1 spatial extent).

    With one pixel and zero padding only the centre tap of each 3x3
    kernel contributes. ``convs``/``fuse`` are (kernel, bias) pairs.
    """
    feats = [float(v) for v in x]
    for kernel, bias in convs:
        k = kernel.shape[0] // 2
        new = []
        for o in range(kernel.shape[3]):
            acc = float(bias[o]) + sum(feats[c] * float(kernel[k, k, c, o]) for c in range(len(feats)))
            new.append(leaky(acc))
        feats += new
    kernel, bias = fuse
    out = []
    for o in range(kernel.shape[3]):
        acc = float(bias[o]) + sum(feats[c] * float(kernel[0, 0, c, o]) for c in range(len(feats)))
        out.append(acc + float(x[o]))
    return np.array(out)
