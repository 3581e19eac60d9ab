"""TWIN detectors: the two-window CUSUM, its self-normalized form and the
nonparametric (ECDF) variant.

Monitoring index ``k`` counts steps after the training sample, so at step
``k`` the observations ``X_1..X_{N+k}`` are available and the admissible
window lengths are ``1 <= l <= min(k, (N+k)/2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .config import ConfigError, DataError, MonitorConfig
from .state import StreamState, self_normalizer_from_sums


@dataclass(frozen=True)
class ScanGrid:
    """Window lengths scanned at each step.

    ``ratio=None`` scans every admissible length. A geometric grid keeps
    ``l = 1``, every ``ceil(r^j)`` and the largest admissible length; the
    maximum over it is a lower bound of the exact maximum.
    """

    ratio: float | None = None

    @classmethod
    def exact(cls) -> "ScanGrid":
        return cls(None)

    @classmethod
    def geometric(cls, ratio: float = 1.1) -> "ScanGrid":
        if not ratio > 1:
            raise ConfigError("geometric grid ratio must exceed 1")
        return cls(float(ratio))

    @property
    def is_exact(self) -> bool:
        return self.ratio is None

    def lengths(self, n: int, k_max: int) -> np.ndarray:
        """Candidate lengths up to ``min(k_max, (n + k_max) // 2)``; empty if exact.

        The kernels add each step's largest admissible length on their own.
        """
        if self.ratio is None:
            return np.zeros(0, dtype=np.int64)
        lmax = max(1, min(k_max, (n + k_max) // 2))
        out = {1}
        v = 1.0
        while v < lmax:
            v *= self.ratio
            out.add(min(int(math.ceil(v)), lmax))
        return np.array(sorted(out), dtype=np.int64)


def _check_window(state_count: int, n: int, ell: int, k: int) -> None:
    if k < 1 or ell < 1 or ell > k or 2 * ell > n + k:
        raise IndexError(f"window l={ell} not admissible at k={k} (N={n})")
    if n + k > state_count:
        raise IndexError(f"step k={k} needs {n + k} observations, have {state_count}")


def twin_weight(ell: int, k: int, cfg: MonitorConfig) -> float:
    """TWIN weight ``l^{-1/2} log^{-b}(C0 + N/l) log^{-b}(C0 + (N+k)/N)``."""
    n, b, c0 = cfg.n_train, cfg.beta, cfg.c0
    return ell**-0.5 * math.log(c0 + n / ell) ** -b * math.log(c0 + (n + k) / n) ** -b


def twin_gamma(state: StreamState, ell: int, k: int) -> float:
    """Two-window contrast ``|min(1, l/N) S_max(l,N) - (S_{N+k} - S_{N+k-l})|``."""
    n = state.n_train
    _check_window(state.count, n, ell, k)
    s = state.prefix_sums
    recent = s[n + k] - s[n + k - ell]
    if ell < n:
        # single division keeps the value exactly shift invariant on integer data
        return abs(ell * s[n] - n * recent) / n
    return abs(s[ell] - recent)


def twin_detector(
    state: StreamState,
    k: int,
    cfg: MonitorConfig,
    grid: ScanGrid = ScanGrid(),
    sigma: float | None = 1.0,
) -> tuple[float, int]:
    """Maximum weighted contrast over admissible windows at step ``k``.

    The value is divided by ``sigma`` (pass the noise standard deviation, or
    1.0 for the raw statistic). Ties go to the smallest window.
    """
    n = state.n_train
    if k < 1 or n + k > state.count:
        raise IndexError(f"step k={k} not available (have {state.count} observations)")
    if sigma is None or not sigma > 0:
        raise DataError("zero variance: the TWIN statistic cannot be scaled")
    lengths = grid.lengths(n, k)
    vals, arg, _ = K.tc_trace(
        state.prefix_sums, n, k, k, cfg.beta, cfg.c0, float(sigma), np.inf, lengths
    )
    return float(vals[0]), int(arg[0])


def self_normalizer(state: StreamState) -> float:
    """``V_N`` of the training sample; frozen once training is complete."""
    if not state.trained:
        raise DataError(f"self-normalizer needs {state.n_train} training observations")
    if state.v_n is not None:
        return state.v_n
    return self_normalizer_from_sums(state.prefix_sums, state.n_train)


def sn_detector(
    state: StreamState, k: int, cfg: MonitorConfig, grid: ScanGrid = ScanGrid()
) -> float:
    """Self-normalized TWIN detector: raw TWIN maximum divided by ``V_N``."""
    v = self_normalizer(state)
    if v == 0:
        raise DataError("degenerate self-normalizer: training sample is constant")
    value, _ = twin_detector(state, k, cfg, grid, sigma=1.0)
    return value / v


def np_gamma(state: StreamState, ell: int, k: int) -> float:
    """Sup-norm contrast of the early and recent unscaled ECDFs."""
    n = state.n_train
    _check_window(state.count, n, ell, k)
    ranks, n_unique = state.dense_ranks()
    cnt_train = np.bincount(ranks[:n], minlength=n_unique).cumsum()
    scratch = np.zeros(n_unique, dtype=np.int64)
    return float(K.np_gamma_direct(ranks, n_unique, n, k, ell, cnt_train, scratch))


def np_detector(
    state: StreamState, k: int, cfg: MonitorConfig, grid: ScanGrid = ScanGrid()
) -> tuple[float, int]:
    """NP-TWIN detector at step ``k``: weighted ECDF contrast maximized over windows."""
    n = state.n_train
    if k < 1 or n + k > state.count:
        raise IndexError(f"step k={k} not available (have {state.count} observations)")
    ranks, n_unique = state.dense_ranks()
    vals, arg, _ = K.np_trace(
        ranks, n_unique, n, k, k, cfg.beta, cfg.c0, np.inf, grid.lengths(n, k)
    )
    return float(vals[0]), int(arg[0])


@dataclass
class DetectorVerdict:
    detected: bool
    k_hat: int | None = None
    statistic: float | None = None
    threshold: float | None = None
    ell_hat: int | None = None
    change_estimate: int | None = None

    def __post_init__(self):
        if self.detected and not (self.statistic > self.threshold):
            raise ValueError("a detection requires statistic > threshold")
        if not self.detected and self.k_hat is not None:
            raise ValueError("k_hat must be absent without a detection")


@dataclass
class DelayResult:
    """Delay ``max(k_hat - k_star, 0)``; alarms before ``k_star`` are false."""

    k_star: int
    k_hat: int | None
    delay: int | None
    false_alarm: bool

    @classmethod
    def from_detection(cls, k_star: int, k_hat: int | None) -> "DelayResult":
        if k_hat is None:
            return cls(k_star, None, None, False)
        return cls(k_star, k_hat, max(k_hat - k_star, 0), k_hat < k_star)
