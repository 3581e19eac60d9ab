"""Monte Carlo critical values and variance estimation.

Limit laws of the TWIN family are simulated from Brownian paths on a graded
time grid (fine near zero where the window weight is largest, coarse in the
discounted far future). The nonparametric law is simulated in finite samples
from uniforms, and the baselines are calibrated by simulating the detector
itself under Gaussian noise.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numba
import numpy as np

from . import _kernels as K
from .baselines import baseline_trace
from .config import (
    ConfigError,
    DataError,
    Detector,
    MonitorConfig,
    TableMismatchError,
    fingerprint,
)

log = logging.getLogger(__name__)

TABLE_VERSION = 1
DEFAULT_LEVELS = tuple(round(0.90 + 0.01 * i, 2) for i in range(10))
SEED_POLICY = "numpy SeedSequence(seed, spawn_key=(draw, stream))"


# ---------------------------------------------------------------- tables


@dataclass
class QuantileTable:
    law: str
    params: dict
    grid_spec: dict
    draws: int
    seed: int | None
    quantiles: dict[float, float]
    fingerprint: str = ""
    version: int = TABLE_VERSION

    def __post_init__(self):
        self.quantiles = {round(float(k), 6): float(v) for k, v in sorted(self.quantiles.items())}
        expected = fingerprint(self.law, self.params, self.grid_spec)
        if not self.fingerprint:
            self.fingerprint = expected
        elif self.fingerprint != expected:
            raise TableMismatchError("table fingerprint does not match its contents")
        vals = list(self.quantiles.values())
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise ConfigError("quantiles must be nondecreasing in level")
        if self.draws < 1:
            raise ConfigError("a table needs at least one draw")

    @property
    def levels(self) -> list[float]:
        return list(self.quantiles)

    def quantile(self, level: float) -> float:
        for lv, v in self.quantiles.items():
            if abs(lv - level) < 1e-9:
                return v
        raise ConfigError(f"level {level} not in table (have {self.levels})")

    def critical_value(self, alpha: float) -> float:
        return self.quantile(1.0 - alpha)

    def check(self, cfg: MonitorConfig) -> None:
        """Raise :class:`TableMismatchError` unless this table fits ``cfg``."""
        law, params = cfg.table_key()
        if law != self.law:
            raise TableMismatchError(f"table is for {self.law}, configuration needs {law}")
        for key, want in params.items():
            have = self.params.get(key)
            if have is None or not math.isclose(have, want, rel_tol=1e-12):
                raise TableMismatchError(
                    f"table has {key}={have}, configuration needs {key}={want}"
                )
        self.critical_value(cfg.alpha)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "law": self.law,
            "params": self.params,
            "grid_spec": self.grid_spec,
            "draws": self.draws,
            "seed": self.seed,
            "quantiles": [[lv, v] for lv, v in self.quantiles.items()],
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileTable":
        try:
            version = int(d["version"])
            if version > TABLE_VERSION:
                raise ConfigError(f"table version {version} is newer than supported {TABLE_VERSION}")
            return cls(
                law=d["law"],
                params=dict(d["params"]),
                grid_spec=dict(d["grid_spec"]),
                draws=int(d["draws"]),
                seed=d.get("seed"),
                quantiles={float(a): float(b) for a, b in d["quantiles"]},
                fingerprint=d["fingerprint"],
                version=version,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed quantile table: {exc}") from exc

    def store(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path, cfg: MonitorConfig | None = None) -> "QuantileTable":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed quantile table {path}: {exc}") from exc
        table = cls.from_dict(d)
        if cfg is not None:
            table.check(cfg)
        return table


def _empirical_quantiles(samples: np.ndarray, levels) -> dict[float, float]:
    srt = np.sort(np.asarray(samples, dtype=float))
    return {float(lv): float(np.quantile(srt, lv)) for lv in levels}


def shipped_table_path(law: str) -> Path:
    name = {"L_SN": "l_sn", "L_TC": "l_tc", "L_F": "l_f"}.get(law)
    if name is None:
        name = "null_" + law[len("NULL_SIM(") : -1].lower()
    return Path(str(resources.files("twinmon") / "data" / f"{name}.json"))


def default_table(cfg: MonitorConfig) -> QuantileTable:
    """Shipped table for ``cfg`` (default tuning parameters only)."""
    law, _ = cfg.table_key()
    path = shipped_table_path(law)
    if not path.exists():
        raise ConfigError(f"no shipped table for {law}; run the calibrate command")
    return QuantileTable.load(path, cfg)


# ---------------------------------------------------------------- Brownian grid


@dataclass(frozen=True)
class GridSpec:
    """Graded time grid for the Brownian functionals.

    Steps are ``base_step``, ``10 base_step`` and ``100 base_step`` on
    ``(0, 10]``, ``(10, 100]`` and ``(100, t_max]``. ``refine`` halves every
    step that many times (the finer path is a Brownian-bridge refinement of
    the coarser one, so convergence studies are coupled).
    """

    t_max: float = 1000.0
    base_step: float = 0.01
    refine: int = 0

    def __post_init__(self):
        unit = 1.0 / self.base_step
        if abs(unit - round(unit)) > 1e-9 or self.refine < 0:
            raise ConfigError("base_step must be 1/integer and refine >= 0")
        if self.t_max < 100 or abs(self.t_max - round(self.t_max)) > 0:
            raise ConfigError("t_max must be an integer >= 100")

    @property
    def coarse_unit(self) -> int:
        return int(round(1.0 / self.base_step))

    @property
    def unit(self) -> int:
        return self.coarse_unit * 2**self.refine

    def coarse_ticks(self) -> np.ndarray:
        u = self.coarse_unit
        parts = [
            np.arange(1, 10 * u + 1, 1),
            np.arange(10 * u + 10, 100 * u + 1, 10),
            np.arange(100 * u + 100, int(self.t_max) * u + 1, 100),
        ]
        return np.concatenate(parts).astype(np.int64)

    def ticks(self) -> np.ndarray:
        t = self.coarse_ticks()
        for _ in range(self.refine):
            prev = np.concatenate(([0], t))
            mid = prev[:-1] + prev[1:]
            t = np.empty(2 * t.shape[0], dtype=np.int64)
            t[0::2] = mid
            t[1::2] = 2 * prev[1:]
        return t

    def to_dict(self) -> dict:
        return {
            "kind": "graded",
            "t_max": float(self.t_max),
            "steps": [self.base_step / 2**self.refine * 10**i for i in range(3)],
            "breaks": [10.0, 100.0],
            "v_rule": "trapezoid on the finest step over [0, 1]",
            "seed_policy": SEED_POLICY,
        }


def _draw_rng(seed: int, draw: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(draw, stream)))


def brownian_path(grid: GridSpec, seed: int, draw: int, scale: float = 1.0) -> np.ndarray:
    """Standard Brownian motion at ``grid.ticks() / grid.unit`` for one draw.

    Coarse increments are drawn in time order, so a longer horizon extends
    the same path; each refinement level inserts bridge midpoints from its
    own stream.
    """
    ticks = grid.coarse_ticks()
    unit = grid.coarse_unit
    dt = np.diff(np.concatenate(([0], ticks))) / unit
    rng = _draw_rng(seed, draw, 0)
    path = np.cumsum(np.sqrt(dt) * rng.standard_normal(ticks.shape[0]))
    for level in range(1, grid.refine + 1):
        rng = _draw_rng(seed, draw, level)
        unit *= 2
        prev_t = np.concatenate(([0], 2 * ticks))
        prev_b = np.concatenate(([0.0], path))
        dt = np.diff(prev_t) / unit
        # Brownian bridge midpoint: mean of the ends, variance dt/4
        mid = 0.5 * (prev_b[:-1] + prev_b[1:]) + 0.5 * np.sqrt(dt) * rng.standard_normal(
            ticks.shape[0]
        )
        path = np.stack([mid, path], axis=1).ravel()
        ticks = np.stack([prev_t[:-1] + np.diff(prev_t) // 2, prev_t[1:]], axis=1).ravel()
    return scale * path


class _Functional:
    """Precomputed weights and index maps for one (beta, c0, grid)."""

    def __init__(self, beta: float, c0: float, grid: GridSpec):
        self.grid = grid
        self.unit = grid.unit
        self.ticks = grid.ticks()
        top = int(self.ticks[-1])
        self.tick_index = np.full(top + 1, -1, dtype=np.int64)
        self.tick_index[self.ticks] = np.arange(self.ticks.shape[0])
        st = np.arange(1, top // 2 + 2, dtype=float) / self.unit
        self.s_weight = np.concatenate(([0.0], 1.0 / (np.sqrt(st) * np.log(c0 + 1.0 / st) ** beta)))
        self.t_weight = np.log(c0 + self.ticks / self.unit) ** (-beta)
        self.v_idx = np.nonzero(self.ticks <= self.unit)[0]
        self.v_x = np.concatenate(([0.0], self.ticks[self.v_idx] / self.unit))

    def sup(self, paths: np.ndarray) -> np.ndarray:
        return K.twin_functional_batch(
            paths, self.ticks, self.tick_index, self.s_weight, self.t_weight, self.unit
        )

    def v(self, path: np.ndarray) -> float:
        b = np.concatenate(([0.0], path[self.v_idx]))
        return float(np.trapezoid(np.abs(b - self.v_x * b[-1]), self.v_x))


def _check_twin_params(beta: float, c0: float) -> None:
    if not beta > 0.5:
        raise ConfigError(f"beta must exceed 1/2, got {beta}")
    if not c0 > 1:
        raise ConfigError(f"c0 must exceed 1, got {c0}")


def _brownian_samples(beta, c0, grid, draws, seed, self_normalized, scale=1.0,
                      threads=None, chunk=64):
    _check_twin_params(beta, c0)
    if draws < 1:
        raise ConfigError("draws must be positive")
    if threads:
        numba.set_num_threads(min(int(threads), numba.config.NUMBA_NUM_THREADS))
    fn = _Functional(beta, c0, grid)
    out = np.empty(draws)
    for start in range(0, draws, chunk):
        stop = min(start + chunk, draws)
        paths = np.stack([brownian_path(grid, seed, d, scale) for d in range(start, stop)])
        sups = fn.sup(paths)
        if self_normalized:
            for i, d in enumerate(range(start, stop)):
                v = fn.v(paths[i])
                attempt = 0
                while v == 0.0:  # probability zero; redraw from a fresh stream
                    attempt += 1
                    log.warning("degenerate self-normalizer in draw %d, redrawing", d)
                    p = brownian_path(grid, seed + 7919 * attempt, d, scale)
                    sups[i] = fn.sup(p[None, :])[0]
                    v = fn.v(p)
                sups[i] /= v
        out[start:stop] = sups
    return out


def simulate_L_SN(beta: float = 0.6, c0: float = 20.0, grid: GridSpec = GridSpec(),
                  draws: int = 10_000, seed: int = 20240601, levels=DEFAULT_LEVELS,
                  threads: int | None = None, scale: float = 1.0,
                  return_samples: bool = False):
    """Quantiles of the self-normalized TWIN limit.

    ``scale`` multiplies every Brownian increment; the law is pivotal, so
    the result does not depend on it.
    """
    s = _brownian_samples(beta, c0, grid, draws, seed, True, scale, threads)
    table = QuantileTable("L_SN", {"beta": float(beta), "c0": float(c0)}, grid.to_dict(),
                          draws, seed, _empirical_quantiles(s, levels))
    return (table, s) if return_samples else table


def simulate_L_TC(beta: float = 0.6, c0: float = 20.0, grid: GridSpec = GridSpec(),
                  draws: int = 10_000, seed: int = 20240602, levels=DEFAULT_LEVELS,
                  threads: int | None = None, return_samples: bool = False):
    """Quantiles of the TWIN limit for unit variance."""
    s = _brownian_samples(beta, c0, grid, draws, seed, False, 1.0, threads)
    table = QuantileTable("L_TC", {"beta": float(beta), "c0": float(c0)}, grid.to_dict(),
                          draws, seed, _empirical_quantiles(s, levels))
    return (table, s) if return_samples else table


# ---------------------------------------------------------------- finite-sample laws


def _uniform(rng, size):
    return rng.random(size)


def _normal(rng, size):
    return rng.standard_normal(size)


SAMPLERS = {"uniform": _uniform, "normal": _normal}


def np_sup_samples(beta: float, c0: float, n_cal: int, t_horizon: float, draws: int,
                   seed: int, data: str = "uniform") -> np.ndarray:
    """Suprema of the exact NP-TWIN trace over ``k <= t_horizon * n_cal``."""
    sampler = SAMPLERS[data]
    k_stop = int(round(t_horizon * n_cal))
    out = np.empty(draws)
    empty = np.zeros(0, dtype=np.int64)
    for d in range(draws):
        x = sampler(_draw_rng(seed, d, 0), n_cal + k_stop)
        uniq, ranks = np.unique(x, return_inverse=True)
        vals, _, _ = K.np_trace(ranks.astype(np.int64), uniq.shape[0], n_cal, 1, k_stop,
                                beta, c0, np.inf, empty)
        out[d] = vals.max()
    return out


def simulate_L_F(beta: float = 0.6, c0: float = 20.0, n_cal: int = 200,
                 t_horizon: float = 20, draws: int = 2000, seed: int = 20240603,
                 levels=DEFAULT_LEVELS, data: str = "uniform",
                 return_samples: bool = False):
    """Quantiles of the NP-TWIN statistic, simulated exactly in finite samples.

    The statistic depends on the data only through ranks, so uniform inputs
    give the law for every continuous distribution.
    """
    _check_twin_params(beta, c0)
    if n_cal < 100 and data == "uniform" and not return_samples:
        raise ConfigError("n_cal must be at least 100 for a calibration table")
    if data not in SAMPLERS:
        raise ConfigError(f"unknown calibration data {data!r}")
    s = np_sup_samples(beta, c0, n_cal, t_horizon, draws, seed, data)
    grid_spec = {"kind": "finite_sample", "n_cal": int(n_cal), "t_horizon": float(t_horizon),
                 "data": data, "seed_policy": SEED_POLICY}
    table = QuantileTable("L_F", {"beta": float(beta), "c0": float(c0)}, grid_spec,
                          draws, seed, _empirical_quantiles(s, levels))
    return (table, s) if return_samples else table


def null_sim_samples(cfg: MonitorConfig, n_cal: int, t_horizon: float, draws: int,
                     seed: int, sigma: float = 1.0, scale: str = "known") -> np.ndarray:
    """Suprema of a baseline detector trace under i.i.d. N(0, sigma^2) noise.

    ``scale="known"`` divides by the true ``sigma``; ``"train_variance"``
    by the training standard deviation of each draw.
    """
    if scale not in ("known", "train_variance"):
        raise ConfigError(f"unknown null-simulation scale {scale!r}")
    k_stop = int(round(t_horizon * n_cal))
    run_cfg = cfg.with_(n_train=n_cal)
    out = np.empty(draws)
    for d in range(draws):
        x = sigma * _draw_rng(seed, d, 0).standard_normal(n_cal + k_stop)
        s = K.compensated_cumsum(x)
        sd = sigma if scale == "known" else float(np.std(x[:n_cal], ddof=1))
        vals, _, _ = baseline_trace(s, n_cal, 1, k_stop, run_cfg, sd)
        out[d] = vals.max()
    return out


def null_sim_quantiles(kind: Detector | str, eta: float = 0.4, b: float = 0.4,
                       c0: float = 20.0, n_cal: int = 200, t_horizon: float = 20,
                       draws: int = 10_000, seed: int = 20240604, levels=DEFAULT_LEVELS,
                       sigma: float = 1.0, scale: str = "known",
                       return_samples: bool = False):
    """Critical values of a baseline detector by simulating it under H0."""
    kind = Detector(kind)
    if kind not in (Detector.C, Detector.PC, Detector.FC, Detector.WC, Detector.MM):
        raise ConfigError(f"null simulation covers C, PC, FC, WC and MM, not {kind.value}")
    cfg = MonitorConfig(n_train=n_cal, eta=eta, b_mosum=b, c0=c0, detector=kind)
    law, params = cfg.table_key()
    s = null_sim_samples(cfg, n_cal, t_horizon, draws, seed, sigma, scale)
    grid_spec = {"kind": "null_simulation", "noise": "normal", "n_cal": int(n_cal),
                 "t_horizon": float(t_horizon), "scale": scale, "seed_policy": SEED_POLICY}
    table = QuantileTable(law, params, grid_spec, draws, seed, _empirical_quantiles(s, levels))
    return (table, s) if return_samples else table


# ---------------------------------------------------------------- variance


@dataclass(frozen=True)
class VarianceEstimate:
    sigma2: float
    sigma2_lr: float | None = None
    bandwidth: int | None = None

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise DataError("variance estimate must be positive")
        if self.sigma2_lr is not None and not self.sigma2_lr > 0:
            raise DataError("long-run variance estimate must be positive")


def estimate_variance(x) -> VarianceEstimate:
    """Unbiased sample variance."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        raise DataError("variance needs at least two observations")
    v = float(np.var(x, ddof=1))
    if v <= 0 or np.ptp(x) == 0:
        raise DataError("zero variance in the training sample")
    return VarianceEstimate(v)


def andrews_bandwidth(x) -> int:
    """``floor(1.1447 (alpha(1) n)^{1/3})`` with the AR(1) plug-in, capped at n^{1/3}."""
    x = np.asarray(x, dtype=float)
    e = x - x.mean()
    n = e.shape[0]
    denom = float(e[:-1] @ e[:-1])
    rho = float(e[1:] @ e[:-1]) / denom if denom > 0 else 0.0
    rho = min(max(rho, -0.97), 0.97)
    a1 = 4 * rho**2 / ((1 - rho) ** 2 * (1 + rho) ** 2)
    bw = math.floor(1.1447 * (a1 * n) ** (1 / 3))
    return int(min(bw, math.floor(n ** (1 / 3))))


def estimate_lrv(x, bandwidth: int | None = None) -> VarianceEstimate:
    """Bartlett-kernel long-run variance of demeaned data.

    ``bandwidth=None`` uses the AR(1) plug-in rule; 0 gives the (biased)
    sample variance.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise DataError("long-run variance needs at least two observations")
    bw = andrews_bandwidth(x) if bandwidth is None else int(bandwidth)
    if bw < 0:
        raise ConfigError("bandwidth must be nonnegative")
    if n < 4 * bw:
        raise DataError(f"bandwidth {bw} needs at least {4 * bw} observations, have {n}")
    e = x - x.mean()
    gamma0 = float(e @ e) / n
    if gamma0 <= 0 or np.ptp(x) == 0:
        raise DataError("zero variance in the training sample")
    lrv = gamma0
    for h in range(1, bw + 1):
        lrv += 2 * (1 - h / (bw + 1)) * float(e[h:] @ e[:-h]) / n
    if lrv <= 0:
        warnings.warn("nonpositive long-run variance, flooring at variance/10", RuntimeWarning)
        lrv = gamma0 / 10
    return VarianceEstimate(float(np.var(x, ddof=1)), lrv, bw)
