"""Comparison detectors: CUSUM (C), Page CUSUM (PC), Full CUSUM (FC), Full
CUSUM with Hoelder weights (WC), modified MOSUM (MM) and the repeated
retrospective CUSUM scan (RC).

All of them read the same :class:`~twinmon.state.StreamState` as the TWIN
detectors, so experiments can run every method on identical data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from . import _kernels as K
from .config import ConfigError, DataError, Detector, MonitorConfig
from .state import StreamState


@dataclass(frozen=True)
class BaselineKind:
    kind: Detector
    eta: float = 0.4
    b: float | None = None
    c0: float | None = None
    orlicz_norm: float | None = None

    def __post_init__(self):
        kind = Detector(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in (Detector.C, Detector.PC, Detector.FC, Detector.WC, Detector.MM, Detector.RC):
            raise ConfigError(f"{kind.value} is not a baseline")
        if not 0 <= self.eta < 0.5:
            raise ConfigError("eta must lie in [0, 1/2)")
        if (self.b is not None) != (kind is Detector.MM):
            raise ConfigError("b is required for MM and only for MM")
        if (self.c0 is not None) != (kind is Detector.WC):
            raise ConfigError("c0 is required for WC and only for WC")
        if (self.orlicz_norm is not None) != (kind is Detector.RC):
            raise ConfigError("orlicz_norm is required for RC and only for RC")

    @classmethod
    def from_config(cls, cfg: MonitorConfig) -> "BaselineKind":
        d = cfg.detector
        return cls(
            d,
            cfg.eta,
            b=cfg.b_mosum if d is Detector.MM else None,
            c0=cfg.c0 if d is Detector.WC else None,
            orlicz_norm=cfg.orlicz_norm if d is Detector.RC else None,
        )


def _sums(state: StreamState, k: int) -> np.ndarray:
    n = state.n_train
    if k < 1 or n + k > state.count:
        raise IndexError(f"step k={k} not available (have {state.count} observations)")
    return state.prefix_sums


def _contrast(a: float, ref: float, recent: float, d: int) -> float:
    """``|(a/d) ref - recent|`` as one numerator and a single division.

    Shifting the data by ``c`` adds ``c a d`` to both numerator terms, so on
    integer-valued data the result is exactly location invariant.
    """
    return abs(a * ref - d * recent) / d


def gamma_c(state: StreamState, k: int) -> float:
    n = state.n_train
    s = _sums(state, k)
    return _contrast(k, s[n], s[n + k] - s[n], n)


def gamma_pc(state: StreamState, ell: int, k: int) -> float:
    n = state.n_train
    s = _sums(state, k)
    if not 0 <= ell <= k:
        raise IndexError(f"split l={ell} outside [0, {k}]")
    return _contrast(k - ell, s[n], s[n + k] - s[n + ell], n)


def gamma_fc(state: StreamState, ell: int, k: int) -> float:
    n = state.n_train
    s = _sums(state, k)
    if not 0 <= ell <= k:
        raise IndexError(f"split l={ell} outside [0, {k}]")
    return _contrast(k - ell, s[n + ell], s[n + k] - s[n + ell], n + ell)


def gamma_mm(state: StreamState, k: int, b: float) -> float:
    n = state.n_train
    s = _sums(state, k)
    lo = math.floor(k * b)
    return _contrast(k - lo, s[n], s[n + k] - s[n + lo], n)


def hks_weight(k: int, n: int, eta: float) -> float:
    """``N^{-1/2} ((N+k)/N)^{-1} ((N+k)/k)^eta``."""
    return n**-0.5 * (n / (n + k)) * ((n + k) / k) ** eta


def holder_weight(ell: int, k: int, n: int, eta: float, c0: float) -> float:
    """``N^{1/2} (N+k)^{eta-1} (k-l)^{-eta} / log(C0 + (N+k)/N)``."""
    return n**0.5 * (n + k) ** (eta - 1) * (k - ell) ** -eta / math.log(c0 + (n + k) / n)


def rc_bound(k: int, n: int, alpha: float, orlicz_norm: float, constant: float = 1.0) -> float:
    """Detection bound of the repeated retrospective scan at step ``k``.

    A centered variable with psi_2 norm ``K`` has moment generating function
    at most ``exp(lambda^2 K^2)``, so each unit-norm CUSUM contrast exceeds
    ``x`` with probability at most ``2 exp(-x^2 / (4 K^2))``. A union bound
    over the ``N+k-1`` splits with the summable schedule
    ``alpha_k = alpha * 6 / (pi^2 k^2)`` gives
    ``2 K sqrt(log(2 (N+k-1) / alpha_k))``, scaled by ``constant``.
    """
    alpha_k = alpha * 6.0 / (math.pi**2 * k * k)
    return constant * 2.0 * orlicz_norm * math.sqrt(math.log(2.0 * (n + k - 1) / alpha_k))


def rc_bounds(n: int, k_start: int, k_stop: int, alpha: float, orlicz_norm: float,
              constant: float = 1.0) -> np.ndarray:
    k = np.arange(k_start, k_stop + 1, dtype=float)
    alpha_k = alpha * 6.0 / (math.pi**2 * k * k)
    return constant * 2.0 * orlicz_norm * np.sqrt(np.log(2.0 * (n + k - 1) / alpha_k))


def baseline_trace(prefix, n: int, k_start: int, k_stop: int, cfg: MonitorConfig,
                   sigma: float = 1.0, threshold: float = np.inf):
    """Kernel dispatch for the baseline detectors over ``k_start..k_stop``.

    Returns ``(values, recent_window_lengths, k_hat)``; RC values are already
    divided by their per-step bound, so its threshold is 1.
    """
    d = cfg.detector
    s = np.ascontiguousarray(prefix, dtype=float)
    if d is Detector.RC:
        bounds = rc_bounds(n, k_start, k_stop, cfg.alpha, cfg.orlicz_norm, cfg.rc_constant)
        return K.retro_trace(s, n, k_start, k_stop, bounds, threshold)
    if not sigma > 0:
        raise DataError("zero variance: baseline statistic cannot be scaled")
    if d is Detector.C:
        return K.cusum_trace(s, n, k_start, k_stop, cfg.eta, sigma, threshold)
    if d is Detector.PC:
        return K.page_trace(s, n, k_start, k_stop, cfg.eta, sigma, threshold)
    if d is Detector.FC:
        return K.full_trace(s, n, k_start, k_stop, cfg.eta, sigma, threshold)
    if d is Detector.WC:
        return K.weighted_full_trace(s, n, k_start, k_stop, cfg.eta, cfg.c0, sigma, threshold)
    if d is Detector.MM:
        return K.mosum_trace(s, n, k_start, k_stop, cfg.eta, cfg.b_mosum, sigma, threshold)
    raise ConfigError(f"{d.value} is not a baseline")


def baseline_detector(state: StreamState, k: int, cfg: MonitorConfig,
                      sigma: float = 1.0) -> float:
    """Weighted baseline statistic at step ``k`` (PC/FC/WC maximized over splits)."""
    _sums(state, k)
    vals, _, _ = baseline_trace(state.prefix_sums, state.n_train, k, k, cfg, sigma)
    return float(vals[0])


def rc_monitor(state: StreamState, k: int, cfg: MonitorConfig,
               bound: float | None = None) -> bool:
    """Does any interior split of ``X_1..X_{N+k}`` exceed the RC bound?

    ``bound`` overrides the schedule (``inf`` never fires, ``0`` fires on any
    nonconstant data).
    """
    if cfg.orlicz_norm is None:
        raise ConfigError("RC requires the Orlicz norm of the noise")
    _sums(state, k)
    n = state.n_train
    if bound is None:
        bound = rc_bound(k, n, cfg.alpha, cfg.orlicz_norm, cfg.rc_constant)
    if bound == 0:
        vals, _, _ = K.retro_trace(state.prefix_sums, n, k, k, np.ones(1), np.inf)
        return bool(vals[0] > 0)
    vals, _, _ = K.retro_trace(state.prefix_sums, n, k, k, np.array([bound]), np.inf)
    return bool(vals[0] > 1.0)


# ---------------------------------------------------------------- Orlicz norms

GAUSSIAN_ORLICZ = math.sqrt(8.0 / 3.0)


def orlicz_norm_gaussian(sigma: float = 1.0) -> float:
    """psi_2 norm of N(0, sigma^2): ``E exp(X^2/c^2) = 2`` at ``c^2 = 8 sigma^2 / 3``."""
    return GAUSSIAN_ORLICZ * sigma


def orlicz_norm_numeric(pdf, lo: float, hi: float) -> float:
    """psi_2 norm of a bounded density on ``[lo, hi]`` by root finding."""

    def excess(c):
        val, _ = integrate.quad(lambda x: math.exp((x / c) ** 2) * pdf(x), lo, hi, limit=200)
        return val - 2.0

    top = max(abs(lo), abs(hi))
    a = top / 10
    while excess(a) < 0:
        a /= 2
    b = top * 10
    return optimize.brentq(excess, a, b, xtol=1e-10)
