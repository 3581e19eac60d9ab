"""Scenario generation and experiment runners: level, power, detection delay
and epidemic (transient) changes.

All detectors in one replication see the same stream, and each replication
draws from its own counter-derived seed, so results do not depend on the
order or the number of worker threads.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import integrate, signal

from ._kernels import compensated_cumsum
from .baselines import GAUSSIAN_ORLICZ, orlicz_norm_numeric
from .calibration import QuantileTable, default_table
from .config import ConfigError, Detector, MonitorConfig, Scale
from .monitoring import critical_value, detector_trace

TRUNC_POINT = 2.513
SQRT3 = math.sqrt(3.0)
FAMILIES = ("normal", "uniform", "truncexp", "cauchy", "ar1", "zero")

RESULT_COLUMNS = (
    "experiment_id", "detector", "noise", "n_train", "t_horizon", "k_star", "delta",
    "duration", "replications", "rejection_rate", "delay_p25", "delay_p50", "delay_p75",
    "false_alarms", "discarded", "seed",
)


def _trunc_exp_moments(c: float = TRUNC_POINT) -> tuple[float, float]:
    """Mean and variance of Exp(1) conditioned on ``E <= c``."""
    mass = 1.0 - math.exp(-c)
    m1, _ = integrate.quad(lambda x: x * math.exp(-x), 0.0, c)
    m2, _ = integrate.quad(lambda x: x * x * math.exp(-x), 0.0, c)
    mean = m1 / mass
    return mean, m2 / mass - mean**2


TRUNC_EXP_MEAN, TRUNC_EXP_VAR = _trunc_exp_moments()


@dataclass(frozen=True)
class NoiseModel:
    """Noise family for simulated streams.

    ``truncexp`` is Exp(1) conditioned on ``E <= 2.513`` and centered by the
    truncated mean; ``standardize=True`` also divides by the truncated
    standard deviation. ``ar1`` filters ``innovation`` noise with coefficient
    ``phi``. ``zero`` produces pure-signal streams for oracle checks.
    """

    family: str = "normal"
    phi: float = 0.0
    innovation: str = "normal"
    standardize: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown noise family {self.family!r}; choose from {FAMILIES}")
        if self.family == "ar1":
            if not abs(self.phi) < 1:
                raise ConfigError("AR(1) coefficient must satisfy |phi| < 1")
            if self.innovation not in FAMILIES[:4]:
                raise ConfigError(f"unknown innovation family {self.innovation!r}")

    @classmethod
    def parse(cls, text: str) -> "NoiseModel":
        """``normal``, ``uniform``, ``truncexp``, ``truncexp:standardized``,
        ``cauchy`` or ``ar1:0.5[:innovation]``."""
        parts = text.lower().split(":")
        name = {"exponential": "truncexp", "exp": "truncexp"}.get(parts[0], parts[0])
        if name == "ar1":
            phi = float(parts[1]) if len(parts) > 1 else 0.5
            return cls("ar1", phi=phi, innovation=parts[2] if len(parts) > 2 else "normal")
        if name == "truncexp" and len(parts) > 1:
            return cls("truncexp", standardize=parts[1].startswith("standard"))
        return cls(name)

    @property
    def label(self) -> str:
        if self.family == "ar1":
            return f"ar1:{self.phi:g}:{self.innovation}"
        if self.family == "truncexp" and self.standardize:
            return "truncexp:standardized"
        return self.family

    def _iid(self, family: str, rng: np.random.Generator, size: int) -> np.ndarray:
        if family == "zero":
            return np.zeros(size)
        if family == "normal":
            return rng.standard_normal(size)
        if family == "uniform":
            return rng.uniform(-SQRT3, SQRT3, size)
        if family == "cauchy":
            return rng.standard_cauchy(size)
        # rejection sampling keeps the draws exact
        out = np.empty(size)
        filled = 0
        accept = 1.0 - math.exp(-TRUNC_POINT)
        while filled < size:
            m = int((size - filled) / accept * 1.1) + 16
            e = rng.exponential(1.0, m)
            e = e[e <= TRUNC_POINT][: size - filled]
            out[filled : filled + e.shape[0]] = e
            filled += e.shape[0]
        out -= TRUNC_EXP_MEAN
        if self.standardize:
            out /= math.sqrt(TRUNC_EXP_VAR)
        return out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family != "ar1":
            return self._iid(self.family, rng, size)
        burn = 200
        u = self._iid(self.innovation, rng, size + burn)
        return signal.lfilter([1.0], [1.0, -self.phi], u)[burn:]

    @property
    def variance(self) -> float:
        """Marginal variance (``inf`` for Cauchy)."""
        base = {
            "normal": 1.0,
            "uniform": 1.0,
            "cauchy": math.inf,
            "zero": 0.0,
            "truncexp": 1.0 if self.standardize else TRUNC_EXP_VAR,
        }
        if self.family == "ar1":
            return base[self.innovation] / (1 - self.phi**2)
        return base[self.family]

    @cached_property
    def orlicz_norm(self) -> float:
        """psi_2 norm of the marginal law; Gaussian proxy when not subgaussian."""
        if self.family == "uniform":
            return orlicz_norm_numeric(lambda x: 1 / (2 * SQRT3), -SQRT3, SQRT3)
        if self.family == "truncexp":
            sd = math.sqrt(TRUNC_EXP_VAR) if self.standardize else 1.0
            mass = 1.0 - math.exp(-TRUNC_POINT)
            m = TRUNC_EXP_MEAN
            return orlicz_norm_numeric(
                lambda x: sd * math.exp(-(x * sd + m)) / mass,
                -m / sd,
                (TRUNC_POINT - m) / sd,
            )
        if self.family == "ar1" and self.innovation != "cauchy":
            return GAUSSIAN_ORLICZ * math.sqrt(self.variance)
        return GAUSSIAN_ORLICZ


@dataclass(frozen=True)
class ChangeSpec:
    """Mean shift of size ``delta`` starting at observation ``N + k_star``
    (1-based). A finite ``duration`` D ends it after observation
    ``N + k_star + floor(D N)``."""

    k_star: int
    delta: float
    duration: float = math.inf

    def __post_init__(self):
        if self.k_star < 1:
            raise ConfigError("k_star must be at least 1")
        if not self.duration >= 0:
            raise ConfigError("duration must be nonnegative")

    def shift(self, n_train: int, length: int) -> np.ndarray:
        mu = np.zeros(length)
        start = n_train + self.k_star - 1  # 0-based
        stop = length if math.isinf(self.duration) else start + math.floor(self.duration * n_train) + 1
        mu[start:min(stop, length)] = self.delta
        return mu


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def generate_stream(noise: NoiseModel, change: ChangeSpec | None, n_train: int,
                    t_horizon: int, seed: int | np.random.Generator, rep: int = 0) -> np.ndarray:
    """``n_train + t_horizon`` observations; the noise does not depend on the change."""
    rng = seed if isinstance(seed, np.random.Generator) else replication_rng(seed, rep)
    x = noise.sample(rng, n_train + t_horizon)
    if change is not None and change.delta != 0:
        x = x + change.shift(n_train, x.shape[0])
    return x


# ---------------------------------------------------------------- experiments


@dataclass
class ExperimentSpec:
    experiment_id: str
    n_train: int = 100
    t_horizon: int = 20  # monitoring steps as a multiple of n_train
    change: ChangeSpec | None = None
    noise: NoiseModel = field(default_factory=NoiseModel)
    detectors: tuple = ("NPTC", "TC", "C", "PC", "FC", "WC", "MM", "RC")
    replications: int = 1000
    seed: int = 1
    alpha: float = 0.05
    beta: float = 0.6
    c0: float = 20.0
    eta: float = 0.4
    b: float = 0.4
    tables: dict = field(default_factory=dict)
    known_variance: float = 1.0
    rc_constant: float = 1.0

    def __post_init__(self):
        self.detectors = tuple(Detector(d) for d in self.detectors)
        if self.replications < 1:
            raise ConfigError("replications must be positive")

    @property
    def horizon(self) -> int:
        return int(self.t_horizon * self.n_train)

    def config(self, det: Detector) -> MonitorConfig:
        """Monitoring configuration used for ``det`` in simulations.

        Parametric detectors divide by the design variance (1 unless set),
        SNTC self-normalizes, NPTC is unscaled and RC receives the Orlicz
        norm of the noise as an oracle input.
        """
        base = MonitorConfig(n_train=self.n_train, beta=self.beta, c0=self.c0, eta=self.eta,
                             b_mosum=self.b, alpha=self.alpha, detector=Detector.TC,
                             scale=Scale.known(self.known_variance))
        if det in (Detector.NPTC, Detector.SNTC):
            return base.with_(detector=det)
        if det is Detector.RC:
            return base.with_(detector=det, orlicz_norm=self.noise.orlicz_norm,
                             rc_constant=self.rc_constant)
        return base.with_(detector=det)


@dataclass
class DetectorOutcome:
    detector: str
    k_hat: np.ndarray  # -1 where nothing crossed
    ell_hat: np.ndarray


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    outcomes: dict[str, DetectorOutcome]
    runtime: float = 0.0

    def rows(self) -> list[dict]:
        sp = self.spec
        ch = sp.change
        out = []
        for det, oc in self.outcomes.items():
            detected = oc.k_hat >= 0
            row = {
                "experiment_id": sp.experiment_id,
                "detector": det,
                "noise": sp.noise.label,
                "n_train": sp.n_train,
                "t_horizon": sp.horizon,
                "k_star": ch.k_star if ch else "",
                "delta": ch.delta if ch else 0.0,
                "duration": (ch.duration if ch else math.inf),
                "replications": sp.replications,
                "rejection_rate": float(detected.mean()),
                "delay_p25": "",
                "delay_p50": "",
                "delay_p75": "",
                "false_alarms": 0,
                "discarded": 0,
                "seed": sp.seed,
            }
            if ch is not None:
                d = delays(oc.k_hat, ch.k_star)
                false = detected & (oc.k_hat < ch.k_star)
                row["false_alarms"] = int(false.sum())
                row["discarded"] = int(sp.replications - d.shape[0])
                if d.shape[0]:
                    q = np.quantile(d, [0.25, 0.5, 0.75])
                    row["delay_p25"], row["delay_p50"], row["delay_p75"] = map(float, q)
            out.append(row)
        return out

    def rejection_rate(self, det) -> float:
        return float((self.outcomes[Detector(det).value].k_hat >= 0).mean())

    def delays(self, det) -> np.ndarray:
        return delays(self.outcomes[Detector(det).value].k_hat, self.spec.change.k_star)

    def median_delay(self, det) -> float:
        d = self.delays(det)
        return float(np.median(d)) if d.shape[0] else math.nan


def delays(k_hat: np.ndarray, k_star: int) -> np.ndarray:
    """Delays ``k_hat - k_star`` of runs detecting at or after the change."""
    k_hat = np.asarray(k_hat)
    ok = k_hat >= k_star
    return (k_hat[ok] - k_star).astype(float)


def _thresholds(spec: ExperimentSpec) -> dict[Detector, float]:
    out = {}
    for det in spec.detectors:
        cfg = spec.config(det)
        table = spec.tables.get(det.value) or spec.tables.get(det)
        if table is None and det is not Detector.RC:
            table = default_table(cfg)
        out[det] = critical_value(cfg, table, None)
    return out


def run_replication(spec: ExperimentSpec, rep: int, thresholds: dict) -> dict:
    x = generate_stream(spec.noise, spec.change, spec.n_train, spec.horizon, spec.seed, rep)
    prefix = None
    ranks = None
    out = {}
    for det in spec.detectors:
        cfg = spec.config(det)
        if det is Detector.NPTC:
            uniq, inv = np.unique(x, return_inverse=True)
            ranks = (inv.astype(np.int64), int(uniq.shape[0]))
        elif prefix is None:
            prefix = compensated_cumsum(x)
        sigma = None
        if det not in (Detector.NPTC, Detector.SNTC, Detector.RC):
            sigma = math.sqrt(spec.known_variance)
        tr = detector_trace(x, cfg, sigma=sigma, threshold=thresholds[det], prefix=prefix,
                            ranks=ranks)
        if tr.k_hat is None:
            out[det.value] = (-1, 0)
        else:
            out[det.value] = (tr.k_hat, int(tr.ell[-1]))
    return out


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Run every replication of ``spec``; identical output for any ``threads``."""
    t0 = time.time()
    thr = _thresholds(spec)
    reps = range(spec.replications)
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            res = list(pool.map(lambda r: run_replication(spec, r, thr), reps))
    else:
        res = [run_replication(spec, r, thr) for r in reps]
    outcomes = {}
    for det in spec.detectors:
        kh = np.array([r[det.value][0] for r in res], dtype=np.int64)
        el = np.array([r[det.value][1] for r in res], dtype=np.int64)
        outcomes[det.value] = DetectorOutcome(det.value, kh, el)
    return ExperimentResult(spec, outcomes, time.time() - t0)


def run_level_experiment(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    if spec.change is not None and spec.change.delta != 0:
        raise ConfigError("a level experiment must not contain a change")
    return run_experiment(replace(spec, change=None), threads)


def run_power_experiment(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    if spec.change is None:
        raise ConfigError("a power experiment needs a change")
    return run_experiment(spec, threads)


def run_delay_experiment(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Delay distribution per detector; pre-change alarms are counted and dropped."""
    if spec.change is None or not math.isinf(spec.change.duration):
        raise ConfigError("a delay experiment needs a permanent change")
    return run_experiment(spec, threads)


def run_epidemic_experiment(spec: ExperimentSpec, durations, threads: int = 1
                            ) -> list[ExperimentResult]:
    """Power as a function of the change duration D (one result per D)."""
    if spec.change is None:
        raise ConfigError("an epidemic experiment needs a change")
    out = []
    for d in durations:
        ch = replace(spec.change, duration=float(d))
        out.append(run_experiment(replace(spec, change=ch, experiment_id=f"{spec.experiment_id}_D{d:g}"),
                                  threads))
    return out


# ---------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def emit_results(results, path, fmt: str = "csv", metadata: dict | None = None) -> Path:
    """Write result rows in a fixed column order (CSV) or a JSON envelope."""
    if isinstance(results, ExperimentResult):
        results = [results]
    rows = [r for res in results for r in res.rows()]
    path = Path(path)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
            w.writeheader()
            for r in rows:
                w.writerow({k: _fmt(r[k]) for k in RESULT_COLUMNS})
    elif fmt == "json":
        doc = {
            "schema": list(RESULT_COLUMNS),
            "metadata": metadata or {},
            "rows": [{k: _fmt(r[k]) for k in RESULT_COLUMNS} for r in rows],
        }
        path.write_text(json.dumps(doc, indent=1) + "\n")
    else:
        raise ConfigError(f"unknown result format {fmt!r}")
    return path


def read_results(path) -> list[dict]:
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text())["rows"]
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))
