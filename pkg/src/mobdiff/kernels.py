"""Hot numeric kernels with two interchangeable lanes.

The numba lane JIT-compiles the loop-bound kernels (transition-sequence
sampling, pairwise trajectory overlap, conv column packing and its gradient
scatter); the numpy lane runs the same arithmetic in vectorized numpy. Set
``MOBDIFF_NO_NUMBA=1`` before import to force the numpy lane (results are
identical; only speed differs). Matrix products stay on BLAS in both lanes:
measured on this class of hardware, a scalar njit matmul loop runs ~40x
slower than GEMM, so convolutions are im2col + GEMM everywhere and only the
packing around them is lane-switched.

``benchmarks/bench_kernels.py`` times the two lanes against each other.
"""

from __future__ import annotations

import os

import numpy as np

_WANT_NUMBA = os.environ.get("MOBDIFF_NO_NUMBA", "0") not in ("1", "true", "yes")

if _WANT_NUMBA:
    try:
        import numba

        ACTIVE_LANE = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        numba = None
        ACTIVE_LANE = "numpy"
else:
    numba = None
    ACTIVE_LANE = "numpy"


def set_num_threads(n: int) -> None:
    """Cap worker threads used by the numba lane (numpy lane is serial)."""
    if numba is not None:
        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


# ---------------------------------------------------------------------------
# EPR transition-sequence sampling
#
# One trajectory consumes exactly 3 pre-drawn uniforms per slot (move?,
# branch, destination) so both lanes reproduce the same sequences bit for
# bit from the same random stream.
# ---------------------------------------------------------------------------


def _epr_sequences_impl(
    homes,
    uniforms,
    move_profile,
    home_profile,
    n_omega,
    beta1,
    beta2,
    rho,
    gamma,
    explore_cdf,
):
    n_traj, traj_len, _ = uniforms.shape
    out = np.empty((n_traj, traj_len), dtype=np.int32)
    visit_loc = np.empty(traj_len + 1, dtype=np.int64)
    visit_cnt = np.empty(traj_len + 1, dtype=np.int64)
    for i in range(n_traj):
        home = homes[i]
        cur = home
        out[i, 0] = cur
        visit_loc[0] = home
        visit_cnt[0] = 1
        n_visited = 1
        prev_moved = False
        for t in range(1, traj_len):
            u_move = uniforms[i, t, 0]
            u_branch = uniforms[i, t, 1]
            u_dest = uniforms[i, t, 2]
            mod = beta2 if prev_moved else beta1
            p_move = n_omega * move_profile[t] * mod
            if p_move > 1.0:
                p_move = 1.0
            nxt = cur
            if u_move < p_move:
                p_home = home_profile[t]
                p_explore = rho * n_visited ** (-gamma)
                if u_branch < p_home:
                    nxt = home
                elif u_branch < p_home + (1.0 - p_home) * p_explore:
                    # explore: flow-row CDF, current already excluded
                    row = explore_cdf[cur]
                    j = np.searchsorted(row, u_dest, side="right")
                    if j >= row.shape[0]:
                        j = row.shape[0] - 1
                    nxt = j
                else:
                    # preferential return over visit counts, excluding cur
                    total = 0
                    for v in range(n_visited):
                        if visit_loc[v] != cur:
                            total += visit_cnt[v]
                    if total == 0:
                        nxt = home
                    else:
                        target = u_dest * total
                        acc = 0.0
                        for v in range(n_visited):
                            if visit_loc[v] == cur:
                                continue
                            acc += visit_cnt[v]
                            if target < acc:
                                nxt = visit_loc[v]
                                break
            if nxt != cur:
                seen = False
                for v in range(n_visited):
                    if visit_loc[v] == nxt:
                        visit_cnt[v] += 1
                        seen = True
                        break
                if not seen:
                    visit_loc[n_visited] = nxt
                    visit_cnt[n_visited] = 1
                    n_visited += 1
                prev_moved = True
            else:
                prev_moved = False
            out[i, t] = nxt
            cur = nxt
    return out


# ---------------------------------------------------------------------------
# pairwise slotwise-agreement counts between two trajectory stacks
# ---------------------------------------------------------------------------


def _overlap_counts_numpy(a, b, chunk: int = 256):
    na = a.shape[0]
    out = np.empty((na, b.shape[0]), dtype=np.int32)
    for s in range(0, na, chunk):
        e = min(s + chunk, na)
        out[s:e] = (a[s:e, None, :] == b[None, :, :]).sum(axis=2, dtype=np.int32)
    return out


def _overlap_counts_impl(a, b):
    na, t = a.shape
    nb = b.shape[0]
    out = np.empty((na, nb), dtype=np.int32)
    for i in range(na):
        for j in range(nb):
            c = 0
            for k in range(t):
                if a[i, k] == b[j, k]:
                    c += 1
            out[i, j] = c
    return out


# ---------------------------------------------------------------------------
# conv1d (kernel 3, same padding, channel-last) column packing and the
# matching gradient scatter. The GEMM itself is BLAS in both lanes.
# ---------------------------------------------------------------------------


def _conv_cols_numpy(x):
    b, t, c = x.shape
    xp = np.zeros((b, t + 2, c), dtype=x.dtype)
    xp[:, 1 : t + 1] = x
    cols = np.empty((b, t, 3 * c), dtype=x.dtype)
    cols[:, :, :c] = xp[:, 0:t]
    cols[:, :, c : 2 * c] = xp[:, 1 : t + 1]
    cols[:, :, 2 * c :] = xp[:, 2 : t + 2]
    return cols


def _conv_cols_impl(x):
    b, t, c = x.shape
    cols = np.zeros((b, t, 3 * c), dtype=x.dtype)
    for i in range(b):
        for s in range(t):
            if s > 0:
                for ch in range(c):
                    cols[i, s, ch] = x[i, s - 1, ch]
            for ch in range(c):
                cols[i, s, c + ch] = x[i, s, ch]
            if s < t - 1:
                for ch in range(c):
                    cols[i, s, 2 * c + ch] = x[i, s + 1, ch]
    return cols


def _conv_cols_grad_numpy(gcols):
    b, t, c3 = gcols.shape
    c = c3 // 3
    gx = gcols[:, :, c : 2 * c].copy()
    gx[:, : t - 1] += gcols[:, 1:, :c]
    gx[:, 1:] += gcols[:, : t - 1, 2 * c :]
    return gx


def _conv_cols_grad_impl(gcols):
    b, t, c3 = gcols.shape
    c = c3 // 3
    gx = np.empty((b, t, c), dtype=gcols.dtype)
    for i in range(b):
        for s in range(t):
            for ch in range(c):
                acc = gcols[i, s, c + ch]
                if s + 1 < t:
                    acc += gcols[i, s + 1, ch]
                if s > 0:
                    acc += gcols[i, s - 1, 2 * c + ch]
                gx[i, s, ch] = acc
    return gx


if numba is not None:
    _epr_sequences_numba = numba.njit(cache=True)(_epr_sequences_impl)
    _overlap_counts_numba = numba.njit(cache=True)(_overlap_counts_impl)
    _conv_cols_numba = numba.njit(cache=True)(_conv_cols_impl)
    _conv_cols_grad_numba = numba.njit(cache=True)(_conv_cols_grad_impl)

    epr_sequences = _epr_sequences_numba
    overlap_counts = _overlap_counts_numba
    conv_cols = _conv_cols_numba
    conv_cols_grad = _conv_cols_grad_numba
else:
    epr_sequences = _epr_sequences_impl
    overlap_counts = _overlap_counts_numpy
    conv_cols = _conv_cols_numpy
    conv_cols_grad = _conv_cols_grad_numpy

# Always-available references for lane-equivalence tests and benchmarks.
numpy_lane = {
    "epr_sequences": _epr_sequences_impl,
    "overlap_counts": _overlap_counts_numpy,
    "conv_cols": _conv_cols_numpy,
    "conv_cols_grad": _conv_cols_grad_numpy,
}
numba_lane = None if numba is None else {
    "epr_sequences": _epr_sequences_numba,
    "overlap_counts": _overlap_counts_numba,
    "conv_cols": _conv_cols_numba,
    "conv_cols_grad": _conv_cols_grad_numba,
}
active_lane = {
    "epr_sequences": epr_sequences,
    "overlap_counts": overlap_counts,
    "conv_cols": conv_cols,
    "conv_cols_grad": conv_cols_grad,
}
