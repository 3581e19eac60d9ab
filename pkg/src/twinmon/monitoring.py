"""Batch detector traces and the sequential monitoring loop."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .baselines import baseline_trace
from .calibration import QuantileTable, default_table, estimate_lrv, estimate_variance
from .config import ConfigError, DataError, Detector, MonitorConfig, ScaleKind
from .detectors import DelayResult, DetectorVerdict, ScanGrid
from .state import StreamState, self_normalizer_of

# detectors whose maximizing window estimates the change location
LOCATING = (Detector.TC, Detector.SNTC, Detector.NPTC, Detector.PC, Detector.FC,
            Detector.WC, Detector.RC)


@dataclass
class Trace:
    values: np.ndarray
    ell: np.ndarray
    k_hat: int | None

    @property
    def k(self) -> np.ndarray:
        return np.arange(1, self.values.shape[0] + 1)


def resolve_sigma(cfg: MonitorConfig, train, monitoring=None) -> float | None:
    """Standard deviation dividing the statistic, or ``None`` when unscaled.

    ``self_normalized`` returns ``V_N``; ``monitoring_variance`` needs the
    monitoring-period observations and is therefore an offline mode.
    """
    kind = cfg.scale.kind
    train = np.asarray(train, dtype=float)
    if kind is ScaleKind.NONE:
        return None
    if kind is ScaleKind.KNOWN:
        return float(np.sqrt(cfg.scale.value))
    if kind is ScaleKind.SELF_NORMALIZED:
        v = self_normalizer_of(train)
        if v == 0:
            raise DataError("degenerate self-normalizer: training sample is constant")
        return v
    if kind is ScaleKind.TRAIN_VARIANCE:
        return float(np.sqrt(estimate_variance(train).sigma2))
    if kind is ScaleKind.LRV:
        bw = None if cfg.scale.value is None else int(cfg.scale.value)
        return float(np.sqrt(estimate_lrv(train, bw).sigma2_lr))
    if kind is ScaleKind.MONITORING_VARIANCE:
        if monitoring is None or len(monitoring) < 2:
            raise ConfigError("monitoring_variance needs the monitoring period (offline mode)")
        return float(np.sqrt(estimate_variance(monitoring).sigma2))
    raise ConfigError(f"unsupported scale {cfg.scale}")


def detector_trace(
    x,
    cfg: MonitorConfig,
    sigma: float | None = None,
    threshold: float = np.inf,
    k_start: int = 1,
    k_stop: int | None = None,
    grid: ScanGrid = ScanGrid(),
    prefix: np.ndarray | None = None,
    ranks: tuple[np.ndarray, int] | None = None,
) -> Trace:
    """Detector values at steps ``k_start..k_stop`` of the sequence ``x``.

    ``sigma=None`` resolves the scale from the configuration; ``prefix`` and
    ``ranks`` may be passed to reuse work across detectors on one stream.
    """
    x = np.asarray(x, dtype=float)
    n = cfg.n_train
    if x.shape[0] <= n:
        raise DataError(f"need more than {n} observations, have {x.shape[0]}")
    k_stop = x.shape[0] - n if k_stop is None else k_stop
    if not 1 <= k_start <= k_stop <= x.shape[0] - n:
        raise IndexError(f"steps {k_start}..{k_stop} outside 1..{x.shape[0] - n}")
    d = cfg.detector
    if sigma is None and d not in (Detector.NPTC, Detector.RC):
        sigma = resolve_sigma(cfg, x[:n], x[n:])
    lengths = grid.lengths(n, k_stop)
    if d is Detector.NPTC:
        r, nu = ranks if ranks is not None else _dense_ranks(x)
        vals, arg, kh = K.np_trace(r, nu, n, k_start, k_stop, cfg.beta, cfg.c0, threshold, lengths)
    else:
        s = K.compensated_cumsum(x) if prefix is None else prefix
        if d in (Detector.TC, Detector.SNTC):
            if not sigma > 0:
                raise DataError("zero variance: the TWIN statistic cannot be scaled")
            vals, arg, kh = K.tc_trace(s, n, k_start, k_stop, cfg.beta, cfg.c0, float(sigma),
                                       threshold, lengths)
        else:
            vals, arg, kh = baseline_trace(s, n, k_start, k_stop, cfg,
                                           1.0 if sigma is None else sigma, threshold)
    return Trace(vals, arg, None if kh < 0 else int(kh))


def _dense_ranks(x: np.ndarray) -> tuple[np.ndarray, int]:
    uniq, inv = np.unique(x, return_inverse=True)
    return inv.astype(np.int64), int(uniq.shape[0])


def critical_value(cfg: MonitorConfig, table: QuantileTable | None,
                   threshold: float | None) -> float:
    if cfg.detector is Detector.RC:
        return 1.0
    if threshold is not None:
        return float(threshold)
    if table is None:
        table = default_table(cfg)
    table.check(cfg)
    return table.critical_value(cfg.alpha)


def change_estimate(cfg: MonitorConfig, k_hat: int, ell_hat: int) -> int | None:
    """0-based index of the first post-change observation, ``N + k_hat - ell_hat``."""
    if cfg.detector not in LOCATING:
        return None
    return cfg.n_train + k_hat - ell_hat


@dataclass
class MonitorReport:
    config: dict
    verdict: DetectorVerdict
    steps: int
    scale: str
    sigma: float | None
    trace_k: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    trace_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def delay(self, k_star: int) -> DelayResult:
        return DelayResult.from_detection(k_star, self.verdict.k_hat)

    def to_dict(self) -> dict:
        v = self.verdict
        return {
            "config": self.config,
            "scale": self.scale,
            "sigma": self.sigma,
            "steps": self.steps,
            "detected": v.detected,
            "k_hat": v.k_hat,
            "statistic": v.statistic,
            "threshold": v.threshold,
            "ell_hat": v.ell_hat,
            "change_estimate": v.change_estimate,
        }


def monitor(
    stream,
    cfg: MonitorConfig,
    table: QuantileTable | None = None,
    threshold: float | None = None,
    horizon: int | None = None,
    trace: bool = False,
    downsample: int = 1,
    batch: int = 256,
    state: StreamState | None = None,
    grid: ScanGrid = ScanGrid(),
    on_step=None,
) -> MonitorReport:
    """Consume the training sample, then monitor until the first crossing.

    Observations are read in batches of ``batch`` monitoring steps; every
    step is still checked, so ``k_hat`` does not depend on the batch size.
    ``horizon`` caps the number of monitoring steps (``None`` is open ended).
    A ``state`` may carry observations from an earlier, interrupted run.
    ``on_step(k, value, ell)`` is called for every evaluated step.
    """
    if cfg.scale.kind is ScaleKind.MONITORING_VARIANCE:
        raise ConfigError("monitoring_variance is an offline mode; use detector_trace")
    crit = critical_value(cfg, table, threshold)
    n = cfg.n_train
    st = state if state is not None else StreamState(n, retain_observations=True)
    if st.n_train != n:
        raise ConfigError("state was created for a different training length")
    it = iter(stream)
    while not st.trained:
        try:
            st.ingest(next(it))
        except StopIteration:
            raise DataError(f"stream ended after {st.count} of {n} training observations")
    train = st.observations[:n]
    sigma = None if cfg.detector is Detector.RC else resolve_sigma(cfg, train)
    tk, tv = [], []
    done = 0
    verdict = DetectorVerdict(False)
    exhausted = False
    while not exhausted:
        want = batch if horizon is None else min(batch, horizon - done)
        if want <= 0:
            break
        need = done + want - st.k
        if need > 0:
            got = 0
            for x in itertools.islice(it, need):
                st.ingest(x)
                got += 1
            exhausted = got < need
        stop = min(st.k, done + want)
        if stop <= done:
            break
        tr = detector_trace(st.observations, cfg, sigma=sigma, threshold=crit,
                            k_start=done + 1, k_stop=stop, grid=grid,
                            prefix=st.prefix_sums)
        if on_step is not None:
            for i in range(tr.values.shape[0]):
                on_step(done + 1 + i, float(tr.values[i]), int(tr.ell[i]))
        if trace:
            ks = np.arange(done + 1, done + 1 + tr.values.shape[0])
            keep = ks % downsample == 0
            if tr.k_hat is not None:
                keep[-1] = True
            tk.append(ks[keep])
            tv.append(tr.values[keep])
        if tr.k_hat is not None:
            kh = tr.k_hat
            ell = int(tr.ell[-1])
            verdict = DetectorVerdict(True, kh, float(tr.values[-1]), crit, ell,
                                      change_estimate(cfg, kh, ell))
            done = kh
            break
        done = stop
    return MonitorReport(
        cfg.to_dict(),
        verdict,
        done,
        str(cfg.scale),
        sigma,
        np.concatenate(tk) if tk else np.zeros(0, dtype=np.int64),
        np.concatenate(tv) if tv else np.zeros(0),
    )
