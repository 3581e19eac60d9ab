"""Brute-force reference implementations used as test oracles.

Everything here re-sums raw observations with plain Python loops; nothing
is shared with the package kernels.
"""
import math


def seg(x, a, b):
    """Sum of the 1-based observations a+1..b."""
    return math.fsum(x[a:b])


def twin_gamma(x, n, ell, k):
    first = (ell / n) * seg(x, 0, n) if ell < n else seg(x, 0, ell)
    return abs(first - seg(x, n + k - ell, n + k))


def twin_weight(ell, k, n, beta, c0):
    return ell**-0.5 * math.log(c0 + n / ell) ** -beta * math.log(c0 + (n + k) / n) ** -beta


def admissible(n, k):
    return range(1, min(k, (n + k) // 2) + 1)


def tc_value(x, n, k, beta, c0, sigma=1.0):
    best, arg = -1.0, 0
    for ell in admissible(n, k):
        v = twin_weight(ell, k, n, beta, c0) * twin_gamma(x, n, ell, k) / sigma
        if v > best:
            best, arg = v, ell
    return best, arg


def self_normalizer(x, n):
    sn = seg(x, 0, n)
    return sum(abs(seg(x, 0, i) - i / n * sn) for i in range(1, n + 1)) / n**1.5


def ecdf(x, a, b, t, strict=False):
    """Count of observations a+1..b that are <= t (or < t)."""
    if strict:
        return sum(1 for v in x[a:b] if v < t)
    return sum(1 for v in x[a:b] if v <= t)


def np_gamma(x, n, ell, k):
    """ECDF contrast maximized over every pooled value and its left limit."""
    pts = sorted(set(x[: n + k]))
    c = min(1.0, ell / n)
    m = max(ell, n)
    best = 0.0
    for t in pts:
        for strict in (False, True):
            g = abs(c * ecdf(x, 0, m, t, strict) - ecdf(x, n + k - ell, n + k, t, strict))
            best = max(best, g)
    return best


def np_value(x, n, k, beta, c0):
    best, arg = -1.0, 0
    for ell in admissible(n, k):
        v = twin_weight(ell, k, n, beta, c0) * np_gamma(x, n, ell, k)
        if v > best:
            best, arg = v, ell
    return best, arg


def w1(k, n, eta):
    return n**-0.5 * ((n + k) / n) ** -1 * ((n + k) / k) ** eta


def w2(ell, k, n, eta, c0):
    return n**0.5 * (n + k) ** (eta - 1) * (k - ell) ** -eta / math.log(c0 + (n + k) / n)


def gamma_c(x, n, k):
    return abs(k / n * seg(x, 0, n) - seg(x, n, n + k))


def gamma_pc(x, n, ell, k):
    return abs((k - ell) / n * seg(x, 0, n) - seg(x, n + ell, n + k))


def gamma_fc(x, n, ell, k):
    return abs((k - ell) / (n + ell) * seg(x, 0, n + ell) - seg(x, n + ell, n + k))


def gamma_mm(x, n, k, b):
    lo = math.floor(k * b)
    return abs((k - lo) / n * seg(x, 0, n) - seg(x, n + lo, n + k))


def baseline_value(x, n, k, kind, eta=0.4, b=0.4, c0=20.0, sigma=1.0):
    if kind == "C":
        return w1(k, n, eta) * gamma_c(x, n, k) / sigma
    if kind == "PC":
        return w1(k, n, eta) * max(gamma_pc(x, n, ell, k) for ell in range(k)) / sigma
    if kind == "FC":
        return w1(k, n, eta) * max(gamma_fc(x, n, ell, k) for ell in range(k)) / sigma
    if kind == "WC":
        return max(w2(ell, k, n, eta, c0) * gamma_fc(x, n, ell, k) for ell in range(k)) / sigma
    if kind == "MM":
        return w1(k, n, eta) * gamma_mm(x, n, k, b) / sigma
    raise ValueError(kind)


def retro_value(x, n, k):
    t = n + k
    st = seg(x, 0, t)
    best = 0.0
    for s in range(1, t):
        a = seg(x, 0, s)
        best = max(best, math.sqrt(s * (t - s) / t) * abs(a / s - (st - a) / (t - s)))
    return best


def rc_bound(k, n, alpha, orlicz):
    # union of 2 exp(-x^2 / 4K^2) tails over n+k-1 splits at level alpha_k
    alpha_k = alpha * 6 / (math.pi**2 * k * k)
    splits = n + k - 1
    return math.sqrt(4 * orlicz**2 * math.log(2 * splits / alpha_k))


def first_crossing(value_at, threshold, k_max):
    """Smallest k in 1..k_max with value_at(k) > threshold, else None."""
    for k in range(1, k_max + 1):
        if value_at(k) > threshold:
            return k
    return None
