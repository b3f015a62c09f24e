"""Pure NumPy versions of the compiled kernels, used when the extension is absent."""
import numpy as np

from .colorspace import CHROMA_RES, LUM_CLIP, LUM_STEP, N_LUM_BINS


def bin_pixels(rgb, valid, median, num_threads=1):
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    s = r + g + b
    ok = valid.astype(bool) & (s > 0)
    chroma = np.full(rgb.shape[0], -1, dtype=np.int32)
    lum = np.full(rgb.shape[0], -1, dtype=np.int32)
    r, g, b, s = r[ok], g[ok], b[ok], s[ok]
    nrm = np.sqrt(r * r + g * g + b * b)
    fu = np.minimum(np.floor((g / nrm) * CHROMA_RES), CHROMA_RES - 1)
    theta = np.arctan2(b / nrm, r / nrm)
    ft = np.minimum(np.floor(theta * (2 * CHROMA_RES) / np.pi), CHROMA_RES - 1)
    chroma[ok] = (fu * CHROMA_RES + ft).astype(np.int32)
    yv = np.minimum(s / median, LUM_CLIP)
    lum[ok] = np.minimum(np.floor(yv / LUM_STEP), N_LUM_BINS - 1).astype(np.int32)
    return chroma, lum


def l1_norms(rgb, num_threads=1):
    return rgb[:, 0] + rgb[:, 1] + rgb[:, 2]


def score_cells(cell_c, cell_y, counts, gmap_t, table, num_threads=1, chunk=4096):
    m = gmap_t.shape[0]
    acc = np.zeros((1, m), dtype=np.float64)
    # Cumulative sums with the running total as row 0 reproduce the
    # compiled kernel's strict cell-order accumulation.
    for lo in range(0, len(cell_c), chunk):
        c = cell_c[lo:lo + chunk]
        vals = counts[lo:lo + chunk, None] * table[cell_y[lo:lo + chunk, None], gmap_t[:, c].T]
        acc = np.cumsum(np.vstack([acc, vals]), axis=0)[-1:]
    return acc[0]


def cell_scores(cell_c, cell_y, gmap_t, table, num_threads=1):
    return table[cell_y[:, None], gmap_t[:, cell_c].T]


def scatter_gradient(cell_c, cell_y, counts, gmap_t, coef, grad):
    width = grad.shape[1]
    active = np.flatnonzero(coef != 0.0)
    if len(active) == 0 or len(cell_c) == 0:
        return
    # Candidate-major ravel matches the compiled loop order.
    idx = (cell_y.astype(np.int64) * width)[None, :] + gmap_t[active][:, cell_c]
    w = counts[None, :] * coef[active, None]
    flat = grad.reshape(-1)
    flat += np.bincount(idx.ravel(), weights=w.ravel(), minlength=flat.size)


_POLY = 0xC96C5795D7870F42
_MASK = 0xFFFFFFFFFFFFFFFF


def _make_table():
    table = []
    for n in range(256):
        c = n
        for _ in range(8):
            c = (c >> 1) ^ _POLY if c & 1 else c >> 1
        table.append(c)
    return table


_TABLE = _make_table()


def crc64(data, crc=0):
    c = ~crc & _MASK
    table = _TABLE
    for byte in bytes(data):
        c = table[(c ^ byte) & 0xFF] ^ (c >> 8)
    return ~c & _MASK
