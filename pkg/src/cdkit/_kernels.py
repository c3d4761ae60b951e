"""Compiled inner loops over CSR adjacency.

All kernels are ``nogil`` and single-threaded; callers parallelise by
splitting work into chunks, each chunk owning its scratch buffers, so the
results never depend on scheduling.
"""
import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def components_chunk(ref_ptr, ref_idx, cit_ptr, cit_idx, years, focals,
                     window, threshold, same_year,
                     out_i, out_j, out_k, out_gap_sum, out_gap_n, out_refsum):
    n = years.size
    count = np.zeros(n, np.int64)
    touched = np.empty(n, np.int64)
    for q in range(focals.size):
        f = focals[q]
        yf = years[f]
        lo = yf if same_year else yf + 1
        hi = yf + window

        # shared-reference counts for every in-window work citing some r in B_f
        nt = 0
        refsum = 0
        for a in range(ref_ptr[f], ref_ptr[f + 1]):
            r = ref_idx[a]
            for b in range(cit_ptr[r], cit_ptr[r + 1]):
                w = cit_idx[b]
                if w == f:
                    continue
                yw = years[w]
                if yw < lo or yw > hi:
                    continue
                refsum += 1
                if count[w] == 0:
                    touched[nt] = w
                    nt += 1
                count[w] += 1

        ni = 0
        nj = 0
        gap_sum = 0
        gap_n = 0
        for a in range(cit_ptr[f], cit_ptr[f + 1]):
            c = cit_idx[a]
            yc = years[c]
            if yc < lo or yc > hi:
                continue
            if count[c] >= threshold:
                nj += 1
            else:
                ni += 1
            # citers of f are never K-type
            count[c] = 0
            for b in range(ref_ptr[c], ref_ptr[c + 1]):
                gap_sum += years[ref_idx[b]] - yf
                gap_n += 1

        nk = 0
        for q2 in range(nt):
            w = touched[q2]
            if count[w] > 0:
                nk += 1
            count[w] = 0

        out_i[q] = ni
        out_j[q] = nj
        out_k[q] = nk
        out_gap_sum[q] = gap_sum
        out_gap_n[q] = gap_n
        out_refsum[q] = refsum


@njit(nogil=True, cache=True)
def _cites(dst, lo, hi, target):
    for e in range(lo, hi):
        if dst[e] == target:
            return True
    return False


@njit(nogil=True, cache=True)
def swap_chain(src, dst, pick_a, pick_b):
    """Double-edge swaps on one stratum, in place on ``dst``.

    ``src`` must be sorted so each citing work's edges form one run; the
    runs never change, only cited endpoints move. Attempt k swaps edges
    ``pick_a[k]`` and ``pick_b[k]`` (the latter drawn from the other m-1
    edges): (a->x, b->y) becomes (a->y, b->x) unless that makes a self-loop
    or an edge already present.
    """
    m = src.size
    run_lo = np.empty(m, np.int64)
    run_hi = np.empty(m, np.int64)
    start = 0
    while start < m:
        stop = start + 1
        while stop < m and src[stop] == src[start]:
            stop += 1
        for e in range(start, stop):
            run_lo[e] = start
            run_hi[e] = stop
        start = stop
    accepted = 0
    for k in range(pick_a.size):
        i = pick_a[k]
        j = pick_b[k]
        if j >= i:
            j += 1
        a = src[i]
        x = dst[i]
        b = src[j]
        y = dst[j]
        if a == b or x == y or a == y or b == x:
            continue
        if _cites(dst, run_lo[i], run_hi[i], y) or _cites(dst, run_lo[j], run_hi[j], x):
            continue
        dst[i] = y
        dst[j] = x
        accepted += 1
    return accepted


@njit(nogil=True, cache=True)
def cocitation_tally(src, dst, in_deg, n_deg, out):
    """Add co-citation counts per (min, max) in-degree bucket into ``out``.

    ``src`` must be sorted so each citing work's edges are contiguous;
    ``out`` is a flat ``n_deg * n_deg`` array indexed ``lo * n_deg + hi``.
    """
    m = src.size
    start = 0
    while start < m:
        stop = start + 1
        while stop < m and src[stop] == src[start]:
            stop += 1
        for p in range(start, stop):
            dp = in_deg[dst[p]]
            for q in range(p + 1, stop):
                dq = in_deg[dst[q]]
                if dp <= dq:
                    out[dp * n_deg + dq] += 1
                else:
                    out[dq * n_deg + dp] += 1
        start = stop
