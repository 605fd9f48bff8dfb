"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (explicit Python loops, closed-form
formulas) and shares no code with the library paths it checks.
"""

from __future__ import annotations

import math

import numpy as np


def shoelace_area(xs, ys) -> float:
    """Polygon area via the shoelace formula (positive for CCW order)."""
    n = len(xs)
    acc = 0.0
    for i in range(n):
        j = (i + 1) % n
        acc += xs[i] * ys[j] - xs[j] * ys[i]
    return 0.5 * acc


def naive_conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None,
                 pad: tuple[int, int]) -> np.ndarray:
    """Quadruple-loop zero-padded cross-correlation."""
    c_in, h, w = x.shape
    c_out, c_in2, kh, kw = weight.shape
    assert c_in == c_in2
    ph, pw = pad
    out = np.zeros((c_out, h + 2 * ph - kh + 1, w + 2 * pw - kw + 1))
    for c in range(c_out):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                acc = 0.0
                for cc in range(c_in):
                    for m in range(kh):
                        for n in range(kw):
                            ii = i + m - ph
                            jj = j + n - pw
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += weight[c, cc, m, n] * x[cc, ii, jj]
                out[c, i, j] = acc + (bias[c] if bias is not None else 0.0)
    return out


def naive_cell_step(x, h, c, gates):
    """Scalar-loop ConvLSTM step.

    ``gates`` maps 'f', 'i', 'c', 'o' to (weight, bias) numpy pairs with
    weights shaped (D, C + D, kh, kw).  Works entirely on the concatenated
    [x, H] stack with explicit sigmoid/tanh per pixel.
    """
    z = np.concatenate([x, h], axis=0)
    d = h.shape[0]
    hh, ww = x.shape[1:]

    def conv(weight, bias):
        kh, kw = weight.shape[2:]
        return naive_conv2d(z, weight, bias, ((kh - 1) // 2, (kw - 1) // 2))

    sig = lambda a: 1.0 / (1.0 + math.exp(-a))
    pre_f = conv(*gates["f"])
    pre_i = conv(*gates["i"])
    pre_c = conv(*gates["c"])
    pre_o = conv(*gates["o"])
    c_new = np.empty((d, hh, ww))
    h_new = np.empty((d, hh, ww))
    for k in range(d):
        for i in range(hh):
            for j in range(ww):
                f = sig(pre_f[k, i, j])
                gi = sig(pre_i[k, i, j])
                cand = math.tanh(pre_c[k, i, j])
                c_new[k, i, j] = f * c[k, i, j] + gi * cand
                o = sig(pre_o[k, i, j])
                h_new[k, i, j] = o * math.tanh(c_new[k, i, j])
    return h_new, c_new


def naive_mse(a: np.ndarray, b: np.ndarray) -> float:
    """Double-loop mean of squared differences over flattened entries."""
    fa, fb = a.ravel(), b.ravel()
    acc = 0.0
    for i in range(fa.size):
        d = float(fa[i]) - float(fb[i])
        acc += d * d
    return acc / fa.size


def naive_mae(a: np.ndarray, b: np.ndarray) -> float:
    fa, fb = a.ravel(), b.ravel()
    acc = 0.0
    for i in range(fa.size):
        acc += abs(float(fa[i]) - float(fb[i]))
    return acc / fa.size


def naive_r2(pred: np.ndarray, truth: np.ndarray) -> float:
    """1 - SSE/SST with the scalar truth mean; NaN for constant truth."""
    p, t = pred.ravel(), truth.ravel()
    mean = sum(float(v) for v in t) / t.size
    sse = sum((float(p[i]) - float(t[i])) ** 2 for i in range(t.size))
    sst = sum((float(v) - mean) ** 2 for v in t)
    if sst < 1e-12:
        return float("nan")
    return 1.0 - sse / sst


def random_triangle_soup(rng: np.random.Generator, n_triangles: int,
                         lo: float = -0.2, hi: float = 1.2):
    """Independent random triangles (as node/connectivity arrays) with
    non-tiny areas, roughly covering [lo, hi]^2."""
    lon, lat, tris = [], [], []
    k = 0
    while k < n_triangles:
        pts = rng.uniform(lo, hi, size=(3, 2))
        area = shoelace_area(pts[:, 0], pts[:, 1])
        if abs(area) < 1e-3:
            continue
        base = 3 * k
        lon.extend(pts[:, 0])
        lat.extend(pts[:, 1])
        tris.append((base, base + 1, base + 2))
        k += 1
    return np.array(lon), np.array(lat), np.array(tris, dtype=np.int64)
