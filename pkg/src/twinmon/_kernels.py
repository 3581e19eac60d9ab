"""Compiled inner loops shared by the online detectors, the simulation lab and
the Monte Carlo calibration.

All trace kernels follow the same convention: prefix sums ``S`` carry
``S[0] = 0`` so that ``S[j]`` is the sum of the first ``j`` observations,
monitoring indices ``k`` run from ``k_start`` to ``k_stop`` inclusive, and the
scan stops at the first ``k`` whose value exceeds ``threshold`` (pass ``inf``
for a full trace). Each returns ``(values, argmax, k_hat)`` where ``k_hat`` is
``-1`` when nothing crossed; ``values``/``argmax`` are truncated at ``k_hat``.
"""
import math

import numba
import numpy as np

numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_JIT = dict(cache=True, nogil=True)


@numba.njit(**_JIT)
def compensated_cumsum(x):
    """Neumaier-compensated prefix sums with a leading zero."""
    out = np.empty(x.shape[0] + 1)
    out[0] = 0.0
    total = 0.0
    comp = 0.0
    for i in range(x.shape[0]):
        v = x[i]
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
        out[i + 1] = total + comp
    return out


@numba.njit(**_JIT)
def twin_scale_weights(n, lmax, beta, c0):
    """``w[l] = l^{-1/2} log^{-beta}(c0 + n/l)`` for ``l = 0..lmax`` (w[0] unused)."""
    w = np.zeros(lmax + 1)
    for ell in range(1, lmax + 1):
        w[ell] = 1.0 / (math.sqrt(ell) * math.log(c0 + n / ell) ** beta)
    return w


@numba.njit(**_JIT)
def twin_time_weight(n, k, beta, c0):
    return math.log(c0 + (n + k) / n) ** (-beta)


@numba.njit(**_JIT)
def _tc_value(S, n, k, wl, wk, grid):
    lmax = min(k, (n + k) // 2)
    end = S[n + k]
    best = -1.0
    arg = 0
    if grid.shape[0] == 0:
        for ell in range(1, lmax + 1):
            if ell < n:
                first = (ell / n) * S[n]
            else:
                first = S[ell]
            g = abs(first - (end - S[n + k - ell]))
            v = wl[ell] * g
            if v > best:
                best = v
                arg = ell
    else:
        last = 0
        for i in range(grid.shape[0] + 1):
            if i < grid.shape[0] and grid[i] < lmax:
                ell = grid[i]
            elif last < lmax:
                ell = lmax
            else:
                break
            last = ell
            if ell < n:
                first = (ell / n) * S[n]
            else:
                first = S[ell]
            g = abs(first - (end - S[n + k - ell]))
            v = wl[ell] * g
            if v > best:
                best = v
                arg = ell
    return best * wk, arg


@numba.njit(**_JIT)
def tc_trace(S, n, k_start, k_stop, beta, c0, scale, threshold, grid):
    """TWIN CUSUM detector values for ``k_start..k_stop`` divided by ``scale``.

    ``grid`` is either empty (every admissible window) or a sorted array of
    candidate window lengths; the largest admissible length is always added.
    """
    lmax = min(k_stop, (n + k_stop) // 2)
    wl = twin_scale_weights(n, lmax, beta, c0)
    m = k_stop - k_start + 1
    values = np.zeros(m)
    argl = np.zeros(m, dtype=np.int64)
    for k in range(k_start, k_stop + 1):
        wk = twin_time_weight(n, k, beta, c0)
        v, a = _tc_value(S, n, k, wl, wk, grid)
        v = v / scale
        values[k - k_start] = v
        argl[k - k_start] = a
        if v > threshold:
            return values[: k - k_start + 1], argl[: k - k_start + 1], k
    return values, argl, -1


# ---------------------------------------------------------------- NP-TWIN


@numba.njit(**_JIT)
def _tree_build(delta, size, tsum, tmax, tmin):
    for i in range(size):
        v = delta[i]
        tsum[size + i] = v
        tmax[size + i] = v
        tmin[size + i] = v
    for i in range(size - 1, 0, -1):
        lo = 2 * i
        hi = lo + 1
        tsum[i] = tsum[lo] + tsum[hi]
        tmax[i] = max(tmax[lo], tsum[lo] + tmax[hi])
        tmin[i] = min(tmin[lo], tsum[lo] + tmin[hi])


@numba.njit(**_JIT)
def _tree_add(pos, v, size, tsum, tmax, tmin):
    i = size + pos
    tsum[i] += v
    tmax[i] = tsum[i]
    tmin[i] = tsum[i]
    i >>= 1
    while i >= 1:
        lo = 2 * i
        hi = lo + 1
        tsum[i] = tsum[lo] + tsum[hi]
        a = tsum[lo] + tmax[hi]
        tmax[i] = tmax[lo] if tmax[lo] > a else a
        b = tsum[lo] + tmin[hi]
        tmin[i] = tmin[lo] if tmin[lo] < b else b
        i >>= 1


@numba.njit(**_JIT)
def _np_short_windows(ranks, n, k, lmax_short, cnt_train, win, wl, wk, best, arg):
    """Windows ``l <= n``: the early block is the training ECDF scaled by l/n.

    Between two consecutive points of the recent window the recent ECDF is
    flat, so the extreme contrast sits at a window point or its left limit.
    """
    end = n + k
    size = 0
    for ell in range(1, lmax_short + 1):
        r = ranks[end - ell]
        j = size
        while j > 0 and win[j - 1] > r:
            win[j] = win[j - 1]
            j -= 1
        win[j] = r
        size += 1
        frac = ell / n
        sup = 0.0
        i = 0
        while i < size:
            v = win[i]
            j = i
            while j < size and win[j] == v:
                j += 1
            below = cnt_train[v - 1] if v > 0 else 0
            d1 = abs(frac * below - i)
            d2 = abs(frac * cnt_train[v] - j)
            if d1 > sup:
                sup = d1
            if d2 > sup:
                sup = d2
            i = j
        val = wl[ell] * sup * wk
        if val > best:
            best = val
            arg = ell
    return best, arg


@numba.njit(**_JIT)
def np_trace(ranks, n_unique, n, k_start, k_stop, beta, c0, threshold, grid):
    """NP-TWIN detector values for ``k_start..k_stop``.

    ``ranks`` are dense value ranks (ties share a rank) of the full observed
    sequence; only a prefix of length ``n + k`` is read at step ``k``.
    ``grid`` restricts the window lengths scanned when non-empty.
    """
    lmax_all = min(k_stop, (n + k_stop) // 2)
    wl = twin_scale_weights(n, lmax_all, beta, c0)
    cnt_train = np.zeros(n_unique, dtype=np.int64)
    for i in range(n):
        cnt_train[ranks[i]] += 1
    for p in range(1, n_unique):
        cnt_train[p] += cnt_train[p - 1]
    size = 1
    while size < n_unique:
        size *= 2
    tsum = np.zeros(2 * size, dtype=np.int32)
    tmax = np.zeros(2 * size, dtype=np.int32)
    tmin = np.zeros(2 * size, dtype=np.int32)
    delta = np.zeros(size, dtype=np.int64)
    win = np.zeros(n + 1, dtype=np.int64)
    use_grid = grid.shape[0] > 0
    if use_grid:
        on_grid = np.zeros(lmax_all + 1, dtype=np.bool_)
        for i in range(grid.shape[0]):
            if grid[i] <= lmax_all:
                on_grid[grid[i]] = True
    else:
        on_grid = np.zeros(1, dtype=np.bool_)

    m = k_stop - k_start + 1
    values = np.zeros(m)
    argl = np.zeros(m, dtype=np.int64)
    for k in range(k_start, k_stop + 1):
        wk = twin_time_weight(n, k, beta, c0)
        lmax = min(k, (n + k) // 2)
        end = n + k
        best = -1.0
        arg = 0
        if use_grid:
            # ECDF contrasts evaluated one window at a time on the grid.
            for ell in range(1, lmax + 1):
                if not on_grid[ell] and ell != lmax:
                    continue
                sup = np_gamma_direct(ranks, n_unique, n, k, ell, cnt_train, delta)
                val = wl[ell] * sup * wk
                if val > best:
                    best = val
                    arg = ell
        else:
            best, arg = _np_short_windows(
                ranks, n, k, min(lmax, n), cnt_train, win, wl, wk, best, arg
            )
            if lmax > n:
                for i in range(size):
                    delta[i] = 0
                for i in range(n):
                    delta[ranks[i]] += 1
                for i in range(end - n, end):
                    delta[ranks[i]] -= 1
                _tree_build(delta, size, tsum, tmax, tmin)
                for ell in range(n + 1, lmax + 1):
                    _tree_add(ranks[ell - 1], 1, size, tsum, tmax, tmin)
                    _tree_add(ranks[end - ell], -1, size, tsum, tmax, tmin)
                    sup = max(tmax[1], -tmin[1])
                    val = wl[ell] * sup * wk
                    if val > best:
                        best = val
                        arg = ell
        values[k - k_start] = best
        argl[k - k_start] = arg
        if best > threshold:
            return values[: k - k_start + 1], argl[: k - k_start + 1], k
    return values, argl, -1


@numba.njit(**_JIT)
def np_gamma_direct(ranks, n_unique, n, k, ell, cnt_train, scratch):
    """Exact ECDF contrast for a single ``(ell, k)`` by a pass over all ranks."""
    for i in range(n_unique):
        scratch[i] = 0
    end = n + k
    for i in range(end - ell, end):
        scratch[ranks[i]] += 1
    if ell < n:
        frac = ell / n
        sup = 0.0
        recent = 0
        for p in range(n_unique):
            recent += scratch[p]
            d = abs(frac * cnt_train[p] - recent)
            if d > sup:
                sup = d
        return sup
    for i in range(ell):
        scratch[ranks[i]] -= 1
    acc = 0
    sup = 0
    for p in range(n_unique):
        acc += scratch[p]
        if abs(acc) > sup:
            sup = abs(acc)
    return float(sup)


# ---------------------------------------------------------------- baselines


@numba.njit(**_JIT)
def hks_weight(n, k, eta):
    """``N^{-1/2} ((N+k)/N)^{-1} ((N+k)/k)^eta``."""
    return (1.0 / math.sqrt(n)) * (n / (n + k)) * ((n + k) / k) ** eta


@numba.njit(**_JIT)
def cusum_trace(S, n, k_start, k_stop, eta, scale, threshold):
    m = k_stop - k_start + 1
    values = np.zeros(m)
    argl = np.zeros(m, dtype=np.int64)
    for k in range(k_start, k_stop + 1):
        g = abs((k / n) * S[n] - (S[n + k] - S[n]))
        v = hks_weight(n, k, eta) * g / scale
        values[k - k_start] = v
        argl[k - k_start] = k
        if v > threshold:
            return values[: k - k_start + 1], argl[: k - k_start + 1], k
    return values, argl, -1


@numba.njit(**_JIT)
def page_trace(S, n, k_start, k_stop, eta, scale, threshold):
    """Page CUSUM maximized over split 0 <= l < k (ties go to the latest split).

    The contrast equals ``|A_k - A_l|`` with ``A_j = j S_N / N - S_{N+j}``, so
    running extremes of ``A`` give the maximum in O(1) per step. The reported
    window is the recent block length ``k - l``.
    """
    m = k_stop - k_start + 1
    values = np.zeros(m)
    argl = np.zeros(m, dtype=np.int64)
    mu = S[n] / n
    amin = np.inf
    amax = -np.inf
    imin = 0
    imax = 0
    for j in range(0, k_start):
        a = j * mu - S[n + j]
        if a <= amin:
            amin = a
            imin = j
        if a >= amax:
            amax = a
            imax = j
    for k in range(k_start, k_stop + 1):
        ak = k * mu - S[n + k]
        d1 = ak - amin
        d2 = amax - ak
        if d1 > d2 or (d1 == d2 and imin > imax):
            g = d1
            split = imin
        else:
            g = d2
            split = imax
        v = hks_weight(n, k, eta) * abs(g) / scale
        values[k - k_start] = v
        argl[k - k_start] = k - split
        if v > threshold:
            return values[: k - k_start + 1], argl[: k - k_start + 1], k
        if ak <= amin:
            amin = ak
            imin = k
        if ak >= amax:
            amax = ak
            imax = k
    return values, argl, -1


@numba.njit(**_JIT)
def full_trace(S, n, k_start, k_stop, eta, scale, threshold):
    """Full CUSUM maximized over split 0 <= l < k (ties go to the latest split).

    ``(k-l)/(N+l) S_{N+l} - (S_{N+k} - S_{N+l}) = (N+k)(m_l - m_k)`` with
    ``m_j`` the running mean of the first ``N+j`` observations.
    """
    m = k_stop - k_start + 1
    values = np.zeros(m)
    argl = np.zeros(m, dtype=np.int64)
    mmin = np.inf
    mmax = -np.inf
    imin = 0
    imax = 0
    for j in range(0, k_start):
        mj = S[n + j] / (n + j)
        if mj <= mmin:
            mmin = mj
            imin = j
        if mj >= mmax:
            mmax = mj
            imax = j
    for k in range(k_start, k_stop + 1):
        mk = S[n + k] / (n + k)
        d1 = mk - mmin
        d2 = mmax - mk
        if d1 > d2 or (d1 == d2 and imin > imax):
            g = d1
            split = imin
        else:
            g = d2
            split = imax
        v = hks_weight(n, k, eta) * (n + k) * abs(g) / scale
        values[k - k_start] = v
        argl[k - k_start] = k - split
        if v > threshold:
            return values[: k - k_start + 1], argl[: k - k_start + 1], k
        if mk <= mmin:
            mmin = mk
            imin = k
        if mk >= mmax:
            mmax = mk
            imax = k
    return values, argl, -1


@numba.njit(**_JIT)
def weighted_full_trace(S, n, k_start, k_stop, eta, c0, scale, threshold):
    """Full CUSUM with the polynomial Hoelder weight, maximized over l < k."""
    m = k_stop - k_start + 1
    values = np.zeros(m)
    argl = np.zeros(m, dtype=np.int64)
    pw = np.zeros(k_stop + 1)
    for j in range(1, k_stop + 1):
        pw[j] = j ** (-eta)
    means = np.zeros(k_stop + 1)
    for j in range(k_stop + 1):
        means[j] = S[n + j] / (n + j)
    sqn = math.sqrt(n)
    for k in range(k_start, k_stop + 1):
        mk = means[k]
        front = sqn * (n + k) ** (eta - 1.0) / math.log(c0 + (n + k) / n) * (n + k)
        best = -1.0
        split = 0
        for ell in range(k):
            v = abs(means[ell] - mk) * pw[k - ell]
            if v >= best:
                best = v
                split = ell
        v = front * best / scale
        values[k - k_start] = v
        argl[k - k_start] = k - split
        if v > threshold:
            return values[: k - k_start + 1], argl[: k - k_start + 1], k
    return values, argl, -1


@numba.njit(**_JIT)
def mosum_trace(S, n, k_start, k_stop, eta, b, scale, threshold):
    m = k_stop - k_start + 1
    values = np.zeros(m)
    argl = np.zeros(m, dtype=np.int64)
    for k in range(k_start, k_stop + 1):
        lo = int(math.floor(k * b))
        g = abs(((k - lo) / n) * S[n] - (S[n + k] - S[n + lo]))
        v = hks_weight(n, k, eta) * g / scale
        values[k - k_start] = v
        argl[k - k_start] = k - lo
        if v > threshold:
            return values[: k - k_start + 1], argl[: k - k_start + 1], k
    return values, argl, -1


@numba.njit(**_JIT)
def retro_trace(S, n, k_start, k_stop, bounds, threshold):
    """Repeated retrospective CUSUM scan divided by its per-step bound.

    ``bounds[k - k_start]`` is the detection bound at step ``k``; the value is
    ``max_s |CUSUM_{s,t}| / bound`` over interior splits of ``X_1..X_t``.
    The reported window is the post-split length ``t - s``.
    """
    m = k_stop - k_start + 1
    values = np.zeros(m)
    argl = np.zeros(m, dtype=np.int64)
    for k in range(k_start, k_stop + 1):
        t = n + k
        st = S[t]
        best = -1.0
        split = 1
        for s in range(1, t):
            c = math.sqrt(s * (t - s) / t) * abs(S[s] / s - (st - S[s]) / (t - s))
            if c >= best:
                best = c
                split = s
        v = best / bounds[k - k_start]
        values[k - k_start] = v
        argl[k - k_start] = t - split
        if v > threshold:
            return values[: k - k_start + 1], argl[: k - k_start + 1], k
    return values, argl, -1


# ---------------------------------------------------------------- Brownian functional


@numba.njit(**_JIT)
def twin_functional_sup(path, ticks, tick_index, s_weight, t_weight, unit_tick):
    """Supremum of the weighted two-window contrast of one Brownian path.

    ``path[i]`` is B at time ``ticks[i] / unit_tick``; ``tick_index`` maps an
    integer tick to its grid index (``-1`` off grid). ``s_weight[st]`` is
    ``1/(sqrt(s) log^beta(c0 + 1/s))`` at ``s = st / unit_tick`` and
    ``t_weight[i]`` is ``log^{-beta}(c0 + t_i)``. Pairs ``(u, t)`` of grid
    points with ``s = t - u``, ``s <= t/2`` and ``u >= 1`` are scanned.
    """
    b1 = path[tick_index[unit_tick]]
    npts = ticks.shape[0]
    best = 0.0
    j0 = 0
    for i in range(npts):
        tt = ticks[i]
        if tt <= unit_tick:
            continue
        bt = path[i]
        half = (tt + 1) // 2
        lo = half if half > unit_tick else unit_tick
        while j0 < npts and ticks[j0] < lo:
            j0 += 1
        row = 0.0
        for j in range(j0, i):
            st = tt - ticks[j]
            if st <= unit_tick:
                first = (st / unit_tick) * b1
            else:
                first = path[tick_index[st]]
            v = abs(first - (bt - path[j])) * s_weight[st]
            if v > row:
                row = v
        row *= t_weight[i]
        if row > best:
            best = row
    return best


@numba.njit(parallel=True, cache=True)
def twin_functional_batch(paths, ticks, tick_index, s_weight, t_weight, unit_tick):
    out = np.zeros(paths.shape[0])
    for d in numba.prange(paths.shape[0]):
        out[d] = twin_functional_sup(paths[d], ticks, tick_index, s_weight, t_weight, unit_tick)
    return out
