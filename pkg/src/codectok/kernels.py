"""Hot numeric kernels: block-matching SAD search and motion-compensated warp.

Both kernels exist twice: a numba ``@njit`` version and a pure-numpy fallback.
The active path is chosen once at import time from the ``CODECTOK_NUMBA``
environment variable (default on, set to ``0``/``false``/``off`` to disable),
or automatically when numba is not importable. Both paths are bit-identical;
``benchmarks/bench_kernels.py`` compares their throughput.

Conventions shared with the rest of the package:
  * motion vector (d_row, d_col) means source pixel = target position minus
    displacement, so prediction[r, c] = ref[clamp(r - d_row), clamp(c - d_col)]
  * clamping is per-axis edge replication
  * SAD ties break lexicographically on (SAD, d_row^2 + d_col^2, d_row, d_col)
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("CODECTOK_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _FLAG not in ("0", "false", "off", "no")

try:
    if NUMBA_REQUESTED:
        import numba
        from numba import njit, prange

        # workqueue is always present; avoids noisy TBB version probes
        numba.config.THREADING_LAYER = "workqueue"
        NUMBA_ACTIVE = True
    else:
        NUMBA_ACTIVE = False
except ImportError:
    NUMBA_ACTIVE = False


def candidate_order(radius: int) -> np.ndarray:
    """All displacements in [-R, R]^2 sorted by (d_row^2 + d_col^2, d_row, d_col).

    Scanning candidates in this order and keeping the first strict SAD
    minimum realizes the lexicographic tie-break exactly.
    """
    span = np.arange(-radius, radius + 1, dtype=np.int64)
    dr, dc = np.meshgrid(span, span, indexing="ij")
    cand = np.stack([dr.ravel(), dc.ravel()], axis=1)
    key = np.lexsort((cand[:, 1], cand[:, 0], cand[:, 0] ** 2 + cand[:, 1] ** 2))
    return cand[key]


# ---------------------------------------------------------------------------
# pure-numpy path
# ---------------------------------------------------------------------------

def warp_numpy(ref: np.ndarray, motion: np.ndarray, block_size: int) -> np.ndarray:
    """Motion-compensated prediction, int16 workspace.

    ref: (H, W, C) u8; motion: (H_G, W_G, 2) integer block vectors.
    """
    h, w, _ = ref.shape
    dense_r = np.repeat(np.repeat(motion[:, :, 0], block_size, axis=0), block_size, axis=1)
    dense_c = np.repeat(np.repeat(motion[:, :, 1], block_size, axis=0), block_size, axis=1)
    rows = np.clip(np.arange(h)[:, None] - dense_r, 0, h - 1)
    cols = np.clip(np.arange(w)[None, :] - dense_c, 0, w - 1)
    return ref[rows, cols].astype(np.int16)


def sad_search_numpy(
    target: np.ndarray, ref: np.ndarray, block_size: int, radius: int
) -> np.ndarray:
    """Exhaustive block SAD search; returns (H_G, W_G, 2) int16 vectors."""
    h, w, c = target.shape
    hg, wg = h // block_size, w // block_size
    tgt = target.astype(np.int64)
    best_sad = np.full((hg, wg), np.iinfo(np.int64).max, dtype=np.int64)
    best = np.zeros((hg, wg, 2), dtype=np.int16)
    row_base = np.arange(h)[:, None]
    col_base = np.arange(w)[None, :]
    for dr, dc in candidate_order(radius):
        rows = np.clip(row_base - dr, 0, h - 1)
        cols = np.clip(col_base - dc, 0, w - 1)
        diff = np.abs(tgt - ref[rows, cols])
        sad = diff.reshape(hg, block_size, wg, block_size, c).sum(axis=(1, 3, 4))
        better = sad < best_sad
        best_sad[better] = sad[better]
        best[better] = (dr, dc)
    return best


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if NUMBA_ACTIVE:

    @njit(cache=True)
    def _warp_njit(ref, d_rows, d_cols, block_size, out):
        h, w, c = ref.shape
        for r in range(h):
            for col in range(w):
                sr = r - d_rows[r // block_size, col // block_size]
                sc = col - d_cols[r // block_size, col // block_size]
                if sr < 0:
                    sr = 0
                elif sr > h - 1:
                    sr = h - 1
                if sc < 0:
                    sc = 0
                elif sc > w - 1:
                    sc = w - 1
                for ch in range(c):
                    out[r, col, ch] = ref[sr, sc, ch]

    @njit(cache=True, parallel=True)
    def _sad_search_njit(target, ref, block_size, cand, out):
        h, w, c = target.shape
        hg = h // block_size
        wg = w // block_size
        n_cand = cand.shape[0]
        for flat in prange(hg * wg):
            bi = flat // wg
            bj = flat % wg
            r0 = bi * block_size
            c0 = bj * block_size
            best_sad = np.int64(2**62)
            best_r = np.int64(0)
            best_c = np.int64(0)
            for k in range(n_cand):
                dr = cand[k, 0]
                dc = cand[k, 1]
                sad = np.int64(0)
                for r in range(r0, r0 + block_size):
                    sr = r - dr
                    if sr < 0:
                        sr = 0
                    elif sr > h - 1:
                        sr = h - 1
                    for col in range(c0, c0 + block_size):
                        sc = col - dc
                        if sc < 0:
                            sc = 0
                        elif sc > w - 1:
                            sc = w - 1
                        for ch in range(c):
                            d = np.int64(target[r, col, ch]) - np.int64(ref[sr, sc, ch])
                            sad += d if d >= 0 else -d
                    if sad >= best_sad:
                        break
                if sad < best_sad:
                    best_sad = sad
                    best_r = dr
                    best_c = dc
            out[bi, bj, 0] = best_r
            out[bi, bj, 1] = best_c

    def warp_njit(ref: np.ndarray, motion: np.ndarray, block_size: int) -> np.ndarray:
        out = np.empty(ref.shape, dtype=np.int16)
        d_rows = np.ascontiguousarray(motion[:, :, 0].astype(np.int64))
        d_cols = np.ascontiguousarray(motion[:, :, 1].astype(np.int64))
        _warp_njit(np.ascontiguousarray(ref), d_rows, d_cols, block_size, out)
        return out

    def sad_search_njit(
        target: np.ndarray, ref: np.ndarray, block_size: int, radius: int
    ) -> np.ndarray:
        h, w, _ = target.shape
        hg, wg = h // block_size, w // block_size
        out = np.empty((hg, wg, 2), dtype=np.int16)
        _sad_search_njit(
            np.ascontiguousarray(target),
            np.ascontiguousarray(ref),
            block_size,
            candidate_order(radius),
            out,
        )
        return out

    warp = warp_njit
    sad_search = sad_search_njit
else:
    warp = warp_numpy
    sad_search = sad_search_numpy
