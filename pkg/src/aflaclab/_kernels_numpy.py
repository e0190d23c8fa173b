"""Pure-numpy implementations of the hot kernels.

Tensors are NHWC: batch, height, width, channels. Weights are
(out_ch, in_ch, kh, kw). Convolutions go through im2col + BLAS matmul,
pooling through strided candidate stacking, and the encoder enumeration
scan through blocked one-hot einsums. Signatures and semantics match the
numba twins in ``_kernels_numba``; the active set is chosen by
``aflaclab.backend``.
"""

from __future__ import annotations

import numpy as np

_TINY = np.finfo(np.float64).tiny


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # (B, H, W, C) -> (B*Ho*Wo, C*kh*kw); column order matches w.reshape(O, -1)
    b, h, w, c = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    patches = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    # patches: (B, Ho, Wo, C, kh, kw)
    return patches.reshape(b * ho * wo, c * kh * kw)


def _w_mat(w: np.ndarray) -> np.ndarray:
    # (O, C, kh, kw) -> (O, C*kh*kw) in the same column order as _im2col
    return w.reshape(w.shape[0], -1)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, h, wid, _ = x.shape
    o, _, kh, kw = w.shape
    ho, wo = h - kh + 1, wid - kw + 1
    y = _im2col(x, kh, kw) @ _w_mat(w).T
    y += b
    return y.reshape(n, ho, wo, o)


def conv2d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray, need_dx: bool):
    n, h, wid, c = x.shape
    o, _, kh, kw = w.shape
    ho, wo = h - kh + 1, wid - kw + 1
    dy_mat = dy.reshape(n * ho * wo, o)
    dw = (dy_mat.T @ _im2col(x, kh, kw)).reshape(o, c, kh, kw)
    db = dy_mat.sum(axis=0)
    if not need_dx:
        return np.zeros((1, 1, 1, 1), dtype=dy.dtype), dw, db
    dcols = (dy_mat @ _w_mat(w)).reshape(n, ho, wo, c, kh, kw)
    dx = np.zeros_like(x)
    for u in range(kh):
        for v in range(kw):
            dx[:, u:u + ho, v:v + wo, :] += dcols[:, :, :, :, u, v]
    return dx, dw, db


def maxpool2_forward(x: np.ndarray):
    b, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    # candidates in (u, v) scan order so argmax tie-breaking matches the loops
    cands = np.stack([
        x[:, 0:2 * h2:2, 0:2 * w2:2, :],
        x[:, 0:2 * h2:2, 1:2 * w2:2, :],
        x[:, 1:2 * h2:2, 0:2 * w2:2, :],
        x[:, 1:2 * h2:2, 1:2 * w2:2, :],
    ], axis=-1)
    idx = cands.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(cands, idx[..., None].astype(np.int64), axis=-1)[..., 0]
    return y, idx


def maxpool2_backward(dy: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    b, h2, w2, c = dy.shape
    dx = np.zeros((b, h, w, c), dtype=dy.dtype)
    for k in range(4):
        u, v = divmod(k, 2)
        dx[:, u:2 * h2:2, v:2 * w2:2, :] += np.where(idx == k, dy, 0)
    return dx


def encoder_scan(p: np.ndarray, n_h: int, t: np.ndarray, logt: np.ndarray,
                 block: int = 4096):
    """Evaluate every deterministic map X -> H in lexicographic order.

    Returns three float64 arrays of length n_h**|X|: the conditional
    entropies of the domain and the class given the code (bits), and the
    expected code-conditional KL divergence against the per-class target
    rows ``t`` (bits; +inf where the target row leaves the code's support).
    """
    nx, nd, ny = p.shape
    n_enc = n_h**nx
    p2 = p.reshape(nx, nd * ny)
    h_d = np.empty(n_enc)
    h_y = np.empty(n_enc)
    kl = np.empty(n_enc)
    pows = n_h ** np.arange(nx - 1, -1, -1, dtype=np.int64)
    # sum_d t[y,d] log t[y,d], reused by every encoder
    tlogt = np.where(t > 0.0, t * logt, 0.0).sum(axis=1)
    for start in range(0, n_enc, block):
        ks = np.arange(start, min(start + block, n_enc), dtype=np.int64)
        digits = (ks[:, None] // pows[None, :]) % n_h
        onehot = (digits[:, :, None] == np.arange(n_h)[None, None, :]).astype(np.float64)
        ph_dy = np.einsum("bxh,xj->bhj", onehot, p2).reshape(len(ks), n_h, nd, ny)
        ph_d = ph_dy.sum(axis=3)
        ph_y = ph_dy.sum(axis=2)
        ph = ph_d.sum(axis=2)
        logph = np.log2(np.maximum(ph, _TINY))
        term_d = np.where(
            ph_d > 0.0, ph_d * (np.log2(np.maximum(ph_d, _TINY)) - logph[:, :, None]), 0.0
        )
        term_y = np.where(
            ph_y > 0.0, ph_y * (np.log2(np.maximum(ph_y, _TINY)) - logph[:, :, None]), 0.0
        )
        h_d[ks] = -term_d.sum(axis=(1, 2))
        h_y[ks] = -term_y.sum(axis=(1, 2))
        logq = np.log2(np.maximum(ph_d / np.maximum(ph, _TINY)[:, :, None], _TINY))
        # KL(t_y || q_h) for every (h, y); support failure -> inf
        cross = np.einsum("yd,bhd->bhy", t, logq)
        kl_hy = tlogt[None, None, :] - cross
        bad = ((t[None, None, :, :] > 0.0) & (ph_d[:, :, None, :] == 0.0)).any(axis=3)
        kl_hy = np.where(bad, np.inf, kl_hy)
        with np.errstate(invalid="ignore"):
            contrib = np.where(ph_y > 0.0, ph_y * kl_hy, 0.0)
        kl[ks] = contrib.sum(axis=(1, 2))
    return h_d, h_y, kl
