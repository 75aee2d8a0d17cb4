"""Brute-force reference implementations, deliberately independent of the package."""
from __future__ import annotations

import math

import numpy as np


def clip_line_integral(img: np.ndarray, x0: float, y0: float, x1: float, y1: float) -> float:
    """Sum over pixels of (segment length inside the pixel box) * value.

    Each pixel box is clipped against the segment on its own (Liang-Barsky),
    so no traversal order is involved.  Column j spans x in [j - n/2, j + 1 - n/2),
    row i spans y in (n/2 - i - 1, n/2 - i]; the half-open ends only matter for
    rays lying exactly on a pixel edge.
    """
    n = img.shape[0]
    length = math.hypot(x1 - x0, y1 - y0)
    total = 0.0
    for i in range(n):
        for j in range(n):
            xa, xb = j - n / 2, j + 1 - n / 2
            ya, yb = n / 2 - i - 1, n / 2 - i
            lo, hi = 0.0, 1.0
            inside = (x1 != x0 or xa <= x0 < xb) and (y1 != y0 or ya < y0 <= yb)
            for p, d, a, b in ((x0, x1 - x0, xa, xb), (y0, y1 - y0, ya, yb)):
                if d != 0.0:
                    t0, t1 = (a - p) / d, (b - p) / d
                    lo, hi = max(lo, min(t0, t1)), min(hi, max(t0, t1))
            if inside and hi > lo:
                total += (hi - lo) * length * img[i, j]
    return total


def dft2(x: np.ndarray) -> np.ndarray:
    """Unnormalised 2-D DFT by direct summation, O(n^4)."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0j
            for m in range(h):
                for n in range(w):
                    acc += x[m, n] * np.exp(-2j * np.pi * (u * m / h + v * n / w))
            out[u, v] = acc
    return out


def idft2(X: np.ndarray) -> np.ndarray:
    h, w = X.shape
    out = np.zeros((h, w), dtype=complex)
    for m in range(h):
        for n in range(w):
            acc = 0j
            for u in range(h):
                for v in range(w):
                    acc += X[u, v] * np.exp(2j * np.pi * (u * m / h + v * n / w))
            out[m, n] = acc / (h * w)
    return out


def centered_freq(n: int) -> np.ndarray:
    """Normalised frequency of each DFT bin, in [-0.5, 0.5)."""
    return np.array([k / n if k < (n + 1) // 2 else k / n - 1.0 for k in range(n)])


def layer_norm_rows(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def attention_loop(y: np.ndarray, wq, bq, wk, bk, wv, bv, n_heads: int,
                   keys: list[int] | None = None, queries: list[int] | None = None) -> np.ndarray:
    """Per-head attention with explicit loops over (query, key) pairs.

    ``y`` is ``(N, C)`` (already normalised).  Returns the concatenated
    per-head outputs before the output projection, for the chosen queries.
    """
    n, c = y.shape
    d = c // n_heads
    q, k, v = y @ wq + bq, y @ wk + bk, y @ wv + bv
    keys = list(range(n)) if keys is None else keys
    queries = list(range(n)) if queries is None else queries
    out = np.zeros((len(queries), c))
    for qi, i in enumerate(queries):
        for h in range(n_heads):
            sl = slice(h * d, (h + 1) * d)
            logits = [sum(q[i, sl][a] * k[j, sl][a] for a in range(d)) / math.sqrt(d)
                      for j in keys]
            top = max(logits)
            e = [math.exp(s - top) for s in logits]
            z = sum(e)
            for wgt, j in zip(e, keys):
                out[qi, sl] += (wgt / z) * v[j, sl]
    return out


def ssim_double_loop(a: np.ndarray, b: np.ndarray, data_range: float,
                     win: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over all fully contained windows, computed with explicit sums."""
    ax = [i - (win - 1) / 2 for i in range(win)]
    g = [[math.exp(-(p * p + q * q) / (2 * sigma * sigma)) for q in ax] for p in ax]
    gs = sum(sum(r) for r in g)
    g = [[v / gs for v in r] for r in g]
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    h, w = a.shape
    vals = []
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            ma = mb = saa = sbb = sab = 0.0
            for p in range(win):
                for q in range(win):
                    wt = g[p][q]
                    x, y = a[i + p, j + q], b[i + p, j + q]
                    ma += wt * x
                    mb += wt * y
                    saa += wt * x * x
                    sbb += wt * y * y
                    sab += wt * x * y
            va, vb, cov = saa - ma * ma, sbb - mb * mb, sab - ma * mb
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def central_diff(f, x: np.ndarray, h: float = 1e-4, coords=None) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x`` (optionally at selected flat coords)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))
