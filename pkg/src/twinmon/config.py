"""Monitoring configuration and the detector/scale vocabularies."""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Any


class ConfigError(ValueError):
    """Invalid tuning parameters or incompatible configuration."""


class DataError(ValueError):
    """Observations that cannot be used (non-finite, degenerate, too short)."""


class TableMismatchError(ConfigError):
    """A quantile table was produced for a different law or parameter set."""


class Detector(str, enum.Enum):
    TC = "TC"
    SNTC = "SNTC"
    NPTC = "NPTC"
    C = "C"
    PC = "PC"
    FC = "FC"
    WC = "WC"
    MM = "MM"
    RC = "RC"


BASELINES = (Detector.C, Detector.PC, Detector.FC, Detector.WC, Detector.MM, Detector.RC)
ALL_DETECTORS = (Detector.NPTC, Detector.TC, *BASELINES)


class ScaleKind(str, enum.Enum):
    KNOWN = "known"
    TRAIN_VARIANCE = "train_variance"
    LRV = "lrv"
    MONITORING_VARIANCE = "monitoring_variance"
    SELF_NORMALIZED = "self_normalized"
    NONE = "none"


@dataclass(frozen=True)
class Scale:
    """How the detector statistic is normalized.

    ``value`` is the known variance for ``known`` and the lag count for
    ``lrv`` (``None`` selects the automatic bandwidth).
    """

    kind: ScaleKind = ScaleKind.TRAIN_VARIANCE
    value: float | None = None

    @classmethod
    def known(cls, sigma2: float = 1.0) -> "Scale":
        return cls(ScaleKind.KNOWN, float(sigma2))

    @classmethod
    def parse(cls, text: str) -> "Scale":
        """Parse ``known``, ``known:2.5``, ``lrv``, ``lrv:8``, ``train_variance`` ..."""
        name, _, arg = text.partition(":")
        try:
            kind = ScaleKind(name.strip())
        except ValueError as exc:
            raise ConfigError(f"unknown scale mode {name!r}") from exc
        value = float(arg) if arg else None
        if kind is ScaleKind.KNOWN and value is None:
            value = 1.0
        return cls(kind, value)

    def __str__(self) -> str:
        if self.value is None:
            return self.kind.value
        return f"{self.kind.value}:{self.value:g}"


def default_scale(detector: Detector) -> Scale:
    if detector is Detector.NPTC:
        return Scale(ScaleKind.NONE)
    if detector is Detector.SNTC:
        return Scale(ScaleKind.SELF_NORMALIZED)
    return Scale(ScaleKind.TRAIN_VARIANCE)


@dataclass(frozen=True)
class MonitorConfig:
    """Tuning parameters of one monitoring procedure.

    Defaults are the simulation settings recommended for the TWIN family
    (beta=0.6, C0=20) and the usual baseline choices (eta=0.4, b=0.4).
    """

    n_train: int = 100
    beta: float = 0.6
    c0: float = 20.0
    eta: float = 0.4
    b_mosum: float = 0.4
    alpha: float = 0.05
    detector: Detector = Detector.TC
    scale: Scale = field(default=None)  # type: ignore[assignment]
    orlicz_norm: float | None = None
    rc_constant: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "detector", Detector(self.detector))
        if self.scale is None:
            object.__setattr__(self, "scale", default_scale(self.detector))
        elif isinstance(self.scale, str):
            object.__setattr__(self, "scale", Scale.parse(self.scale))
        self.validate()

    def validate(self) -> None:
        if int(self.n_train) != self.n_train or self.n_train < 2:
            raise ConfigError(f"n_train must be an integer >= 2, got {self.n_train}")
        if not self.beta > 0.5:
            raise ConfigError(f"beta must exceed 1/2, got {self.beta}")
        if not self.c0 > 1:
            raise ConfigError(f"c0 must exceed 1, got {self.c0}")
        if not 0 <= self.eta < 0.5:
            raise ConfigError(f"eta must lie in [0, 1/2), got {self.eta}")
        if not 0 < self.b_mosum < 1:
            raise ConfigError(f"b must lie in (0, 1), got {self.b_mosum}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        kind = self.scale.kind
        if self.detector is Detector.NPTC and kind is not ScaleKind.NONE:
            raise ConfigError("NPTC is distribution free and takes scale mode 'none'")
        if self.detector is Detector.SNTC and kind is not ScaleKind.SELF_NORMALIZED:
            raise ConfigError("SNTC requires scale mode 'self_normalized'")
        if self.detector not in (Detector.NPTC, Detector.SNTC) and kind in (
            ScaleKind.NONE,
            ScaleKind.SELF_NORMALIZED,
        ):
            raise ConfigError(f"{self.detector.value} needs a variance scale, got {kind.value}")
        if kind is ScaleKind.KNOWN and not (self.scale.value and self.scale.value > 0):
            raise ConfigError("known variance must be positive")
        if self.detector is Detector.RC:
            if self.orlicz_norm is None or not self.orlicz_norm > 0:
                raise ConfigError("RC requires a positive orlicz_norm")
            if not self.rc_constant >= 0:
                raise ConfigError("rc_constant must be nonnegative")

    def with_(self, **changes: Any) -> "MonitorConfig":
        if "detector" in changes and "scale" not in changes:
            det = Detector(changes["detector"])
            if det in (Detector.NPTC, Detector.SNTC) or self.detector in (
                Detector.NPTC,
                Detector.SNTC,
            ):
                changes["scale"] = default_scale(det)
        return replace(self, **changes)

    def table_key(self) -> tuple[str, dict]:
        """Law name and parameters a critical-value table must carry."""
        d = self.detector
        if d in (Detector.TC, Detector.SNTC, Detector.NPTC):
            law = {Detector.TC: "L_TC", Detector.SNTC: "L_SN", Detector.NPTC: "L_F"}[d]
            return law, {"beta": float(self.beta), "c0": float(self.c0)}
        params: dict = {"eta": float(self.eta)}
        if d is Detector.MM:
            params["b"] = float(self.b_mosum)
        if d is Detector.WC:
            params["c0"] = float(self.c0)
        return f"NULL_SIM({d.value})", params

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detector"] = self.detector.value
        d["scale"] = str(self.scale)
        return d


def fingerprint(law: str, params: dict, grid_spec: dict) -> str:
    """Stable hash over the canonical JSON of a table's defining inputs."""
    payload = json.dumps(
        {"law": law, "params": params, "grid_spec": grid_spec},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]
