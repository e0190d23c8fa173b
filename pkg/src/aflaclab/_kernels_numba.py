"""Numba-compiled twins of the hot kernels.

Tensors are NHWC so the innermost loops run over contiguous channels.
Plain nested loops, nopython mode, no fastmath: results are deterministic
for a fixed backend. Compiled objects are cached on disk, so only the
first call in a fresh environment pays the JIT cost.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def conv2d_forward(x, w, b):
    n, h, wid, c = x.shape
    o, _, kh, kw = w.shape
    ho = h - kh + 1
    wo = wid - kw + 1
    wt = w.transpose(0, 2, 3, 1).copy()  # (O, kh, kw, C): contiguous over C
    y = np.empty((n, ho, wo, o), dtype=x.dtype)
    for bi in range(n):
        for i in range(ho):
            for j in range(wo):
                for oi in range(o):
                    acc = b[oi]
                    for u in range(kh):
                        for v in range(kw):
                            xrow = x[bi, i + u, j + v]
                            wrow = wt[oi, u, v]
                            for ci in range(c):
                                acc += xrow[ci] * wrow[ci]
                    y[bi, i, j, oi] = acc
    return y


@njit(cache=True, nogil=True)
def conv2d_backward(x, w, dy, need_dx):
    n, h, wid, c = x.shape
    o, _, kh, kw = w.shape
    ho = h - kh + 1
    wo = wid - kw + 1
    wt = w.transpose(0, 2, 3, 1).copy()
    dwt = np.zeros((o, kh, kw, c), dtype=dy.dtype)
    db = np.zeros(o, dtype=dy.dtype)
    if need_dx:
        dx = np.zeros((n, h, wid, c), dtype=dy.dtype)
    else:
        dx = np.zeros((1, 1, 1, 1), dtype=dy.dtype)
    for bi in range(n):
        for i in range(ho):
            for j in range(wo):
                for oi in range(o):
                    g = dy[bi, i, j, oi]
                    db[oi] += g
                    for u in range(kh):
                        for v in range(kw):
                            xrow = x[bi, i + u, j + v]
                            drow = dwt[oi, u, v]
                            for ci in range(c):
                                drow[ci] += g * xrow[ci]
                    if need_dx:
                        for u in range(kh):
                            for v in range(kw):
                                dxrow = dx[bi, i + u, j + v]
                                wrow = wt[oi, u, v]
                                for ci in range(c):
                                    dxrow[ci] += g * wrow[ci]
    dw = dwt.transpose(0, 3, 1, 2).copy()
    return dx, dw, db


@njit(cache=True, nogil=True)
def maxpool2_forward(x):
    n, h, w, c = x.shape
    h2 = h // 2
    w2 = w // 2
    y = np.empty((n, h2, w2, c), dtype=x.dtype)
    idx = np.empty((n, h2, w2, c), dtype=np.uint8)
    for bi in range(n):
        for i in range(h2):
            for j in range(w2):
                for ci in range(c):
                    best = x[bi, 2 * i, 2 * j, ci]
                    code = np.uint8(0)
                    for k in range(1, 4):
                        u = k // 2
                        v = k % 2
                        val = x[bi, 2 * i + u, 2 * j + v, ci]
                        if val > best:
                            best = val
                            code = np.uint8(k)
                    y[bi, i, j, ci] = best
                    idx[bi, i, j, ci] = code
    return y, idx


@njit(cache=True, nogil=True)
def maxpool2_backward(dy, idx, h, w):
    n, h2, w2, c = dy.shape
    dx = np.zeros((n, h, w, c), dtype=dy.dtype)
    for bi in range(n):
        for i in range(h2):
            for j in range(w2):
                for ci in range(c):
                    code = idx[bi, i, j, ci]
                    u = code // 2
                    v = code % 2
                    dx[bi, 2 * i + u, 2 * j + v, ci] += dy[bi, i, j, ci]
    return dx


@njit(cache=True, nogil=True)
def encoder_scan(p, n_h, t, logt):
    nx, nd, ny = p.shape
    n_enc = np.int64(1)
    for _ in range(nx):
        n_enc *= n_h
    h_d = np.empty(n_enc)
    h_y = np.empty(n_enc)
    kl = np.empty(n_enc)
    e = np.zeros(nx, dtype=np.int64)
    ph_dy = np.zeros((n_h, nd, ny))
    tlogt = np.zeros(ny)
    for y in range(ny):
        for d in range(nd):
            if t[y, d] > 0.0:
                tlogt[y] += t[y, d] * logt[y, d]
    for k in range(n_enc):
        for hh in range(n_h):
            for d in range(nd):
                for y in range(ny):
                    ph_dy[hh, d, y] = 0.0
        for x in range(nx):
            hh = e[x]
            for d in range(nd):
                for y in range(ny):
                    ph_dy[hh, d, y] += p[x, d, y]
        hd = 0.0
        hy = 0.0
        kk = 0.0
        for hh in range(n_h):
            ph = 0.0
            for d in range(nd):
                for y in range(ny):
                    ph += ph_dy[hh, d, y]
            if ph <= 0.0:
                continue
            logph = np.log2(ph)
            for d in range(nd):
                pd = 0.0
                for y in range(ny):
                    pd += ph_dy[hh, d, y]
                if pd > 0.0:
                    hd -= pd * (np.log2(pd) - logph)
            for y in range(ny):
                py = 0.0
                for d in range(nd):
                    py += ph_dy[hh, d, y]
                if py > 0.0:
                    hy -= py * (np.log2(py) - logph)
                    # KL(t_y || ptilde(d|h)) in bits
                    cross = 0.0
                    ok = True
                    for d in range(nd):
                        if t[y, d] > 0.0:
                            pd = 0.0
                            for yy in range(ny):
                                pd += ph_dy[hh, d, yy]
                            if pd <= 0.0:
                                ok = False
                                break
                            cross += t[y, d] * (np.log2(pd) - logph)
                    if ok:
                        kk += py * (tlogt[y] - cross)
                    else:
                        kk = np.inf
        h_d[k] = hd
        h_y[k] = hy
        kl[k] = kk
        # odometer increment, last position fastest: lexicographic order
        pos = nx - 1
        while pos >= 0:
            e[pos] += 1
            if e[pos] == n_h:
                e[pos] = 0
                pos -= 1
            else:
                break
    return h_d, h_y, kl
