"""Pure-numpy kernel implementations, API-identical to the compiled core.

unfold gathers, so it matches the compiled path bitwise. fold_add and
conv2d_direct accumulate in a different association order than the compiled
loops, so they agree with the extension only to roundoff (exactly, when
windows do not overlap).
"""

from __future__ import annotations

import numpy as np


def _pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def unfold(x: np.ndarray, kh: int, kw: int, sh: int, sw: int, ph: int, pw: int) -> np.ndarray:
    B, C, H, W = x.shape
    OH = (H + 2 * ph - kh) // sh + 1
    OW = (W + 2 * pw - kw) // sw + 1
    xp = _pad(x, ph, pw)
    sB, sC, sH, sW = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, C, OH, OW, kh, kw),
        strides=(sB, sC, sH * sh, sW * sw, sH, sW),
        writeable=False,
    )
    # point-major layout: (kh, kw, C) flattened per window
    cols = windows.transpose(0, 2, 3, 4, 5, 1).reshape(B, OH, OW, kh * kw * C)
    return np.ascontiguousarray(cols)


def fold_add(cols: np.ndarray, C: int, H: int, W: int,
             kh: int, kw: int, sh: int, sw: int, ph: int, pw: int) -> np.ndarray:
    B, OH, OW, n = cols.shape
    out = np.zeros((B, C, H + 2 * ph, W + 2 * pw), dtype=cols.dtype)
    win = cols.reshape(B, OH, OW, kh, kw, C)
    for i in range(kh):
        for j in range(kw):
            hs = slice(i, i + OH * sh, sh)
            ws = slice(j, j + OW * sw, sw)
            if sh >= kh and sw >= kw:
                # non-overlapping taps: plain add is safe
                out[:, :, hs, ws] += win[:, :, :, i, j, :].transpose(0, 3, 1, 2)
            else:
                np.add.at(out, (slice(None), slice(None), hs, ws),
                          win[:, :, :, i, j, :].transpose(0, 3, 1, 2))
    if ph or pw:
        out = out[:, :, ph:ph + H, pw:pw + W]
    return np.ascontiguousarray(out)


def conv2d_direct(x: np.ndarray, w: np.ndarray, sh: int, sw: int, ph: int, pw: int) -> np.ndarray:
    B, C, H, W = x.shape
    CO, _, kh, kw = w.shape
    OH = (H + 2 * ph - kh) // sh + 1
    OW = (W + 2 * pw - kw) // sw + 1
    xp = _pad(x, ph, pw)
    out = np.zeros((B, CO, OH, OW), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + OH * sh:sh, j:j + OW * sw:sw]
            out += np.einsum("bchw,oc->bohw", patch, w[:, :, i, j], optimize=True)
    return out
