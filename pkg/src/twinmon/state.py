"""Streaming state: compensated prefix sums, retained observations and a rank
index over observed values."""
from __future__ import annotations

import math

import numpy as np
from sortedcontainers import SortedList

from ._kernels import compensated_cumsum
from .config import ConfigError, DataError

SNAPSHOT_VERSION = 1


class RankIndex:
    """Order statistics over the values seen so far.

    Insertion is O(log n). Range-restricted counts scan the requested slice of
    the retained observations, which is all the detectors need.
    """

    def __init__(self):
        self._sorted = SortedList()

    def add(self, x: float) -> None:
        self._sorted.add(x)

    def __len__(self) -> int:
        return len(self._sorted)

    def count_le(self, x: float) -> int:
        return self._sorted.bisect_right(x)

    def count_lt(self, x: float) -> int:
        return self._sorted.bisect_left(x)

    def distinct(self) -> np.ndarray:
        return np.unique(np.fromiter(self._sorted, dtype=float, count=len(self._sorted)))


class StreamState:
    """Single-writer state of one monitoring session.

    ``prefix_sums[j]`` is the sum of the first ``j`` observations (``[0]`` is
    0), accumulated with Neumaier compensation. Once ``n_train`` values have
    arrived the training mean, variance and self-normalizer are frozen.
    """

    def __init__(self, n_train: int, retain_observations: bool = True):
        if n_train < 2:
            raise ConfigError("n_train must be at least 2")
        self.n_train = int(n_train)
        self.retain_observations = retain_observations
        self.count = 0
        self._sums = np.zeros(1024)
        self._obs = np.zeros(1024) if retain_observations else None
        self._total = 0.0
        self._comp = 0.0
        self.rank_index = RankIndex() if retain_observations else None
        self.v_n: float | None = None
        self.train_mean: float | None = None
        self.train_var: float | None = None

    @property
    def prefix_sums(self) -> np.ndarray:
        return self._sums[: self.count + 1]

    @property
    def observations(self) -> np.ndarray:
        if self._obs is None:
            raise ConfigError("this state does not retain observations")
        return self._obs[: self.count]

    @property
    def k(self) -> int:
        """Current monitoring index (0 while training)."""
        return max(self.count - self.n_train, 0)

    @property
    def trained(self) -> bool:
        return self.count >= self.n_train

    def _grow(self) -> None:
        cap = 2 * self._sums.shape[0]
        sums = np.zeros(cap)
        sums[: self._sums.shape[0]] = self._sums
        self._sums = sums
        if self._obs is not None:
            obs = np.zeros(cap)
            obs[: self._obs.shape[0]] = self._obs
            self._obs = obs

    def ingest(self, x: float) -> "StreamState":
        x = float(x)
        if not math.isfinite(x):
            raise DataError(f"non-finite observation {x!r} at position {self.count + 1}")
        if self.count + 2 > self._sums.shape[0]:
            self._grow()
        t = self._total + x
        if abs(self._total) >= abs(x):
            self._comp += (self._total - t) + x
        else:
            self._comp += (x - t) + self._total
        self._total = t
        if self._obs is not None:
            self._obs[self.count] = x
            self.rank_index.add(x)
        self.count += 1
        self._sums[self.count] = self._total + self._comp
        if self.count == self.n_train:
            self._freeze_training()
        return self

    def extend(self, xs) -> "StreamState":
        for x in xs:
            self.ingest(x)
        return self

    def _freeze_training(self) -> None:
        n = self.n_train
        s = self._sums[: n + 1]
        train = self._obs[:n] if self._obs is not None else np.diff(s)
        self.v_n = self_normalizer_of(train)
        self.train_mean = s[n] / n
        if self._obs is not None:
            self.train_var = float(np.var(self._obs[:n], ddof=1))
        else:
            self.train_var = float(np.var(np.diff(s), ddof=1))

    def dense_ranks(self) -> tuple[np.ndarray, int]:
        """Dense ranks (ties share a rank) of the retained observations."""
        uniq, inv = np.unique(self.observations, return_inverse=True)
        return inv.astype(np.int64), int(uniq.shape[0])

    # -- snapshots -----------------------------------------------------

    def snapshot(self, config_fingerprint: str = "") -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "config_fingerprint": config_fingerprint,
            "n_train": self.n_train,
            "retain_observations": self.retain_observations,
            "count": self.count,
            "total": self._total,
            "comp": self._comp,
            "prefix_sums": self.prefix_sums.tolist(),
            "observations": self.observations.tolist() if self._obs is not None else None,
        }

    @classmethod
    def restore(cls, snap: dict, config_fingerprint: str | None = None) -> "StreamState":
        if snap.get("version") != SNAPSHOT_VERSION:
            raise ConfigError(f"unsupported snapshot version {snap.get('version')!r}")
        if config_fingerprint is not None and snap.get("config_fingerprint") != config_fingerprint:
            raise ConfigError("snapshot was taken under a different configuration")
        st = cls(snap["n_train"], snap["retain_observations"])
        count = snap["count"]
        while st._sums.shape[0] < count + 2:
            st._grow()
        st._sums[: count + 1] = snap["prefix_sums"]
        if st._obs is not None:
            obs = snap["observations"]
            st._obs[:count] = obs
            for x in obs:
                st.rank_index.add(x)
        st.count = count
        st._total = snap["total"]
        st._comp = snap["comp"]
        if count >= st.n_train:
            st._freeze_training()
        return st


def self_normalizer_from_sums(prefix_sums: np.ndarray, n: int) -> float:
    """``N^{-3/2} sum_{i<=N} |S_i - (i/N) S_N|`` from prefix sums with S_0 = 0."""
    s = np.asarray(prefix_sums[1 : n + 1], dtype=float)
    i = np.arange(1, n + 1)
    return float(np.abs(s - (i / n) * s[-1]).sum() / n**1.5)


def self_normalizer_of(x) -> float:
    """``V_N`` of the values ``x``; centering first makes constant input give exactly 0."""
    x = np.asarray(x, dtype=float)
    c = x - x[0]
    return self_normalizer_from_sums(compensated_cumsum(c), c.shape[0])


def prefix_sums(x) -> np.ndarray:
    """Compensated prefix sums with a leading zero."""
    return compensated_cumsum(np.ascontiguousarray(x, dtype=float))
