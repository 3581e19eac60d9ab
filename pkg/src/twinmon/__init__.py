"""Sequential mean-change detection with two-window (TWIN) CUSUM detectors."""
from .baselines import baseline_detector, gamma_c, gamma_fc, gamma_mm, gamma_pc, rc_monitor
from .calibration import (
    GridSpec,
    QuantileTable,
    VarianceEstimate,
    default_table,
    estimate_lrv,
    estimate_variance,
    null_sim_quantiles,
    simulate_L_F,
    simulate_L_SN,
    simulate_L_TC,
)
from .config import (
    ConfigError,
    DataError,
    Detector,
    MonitorConfig,
    Scale,
    ScaleKind,
    TableMismatchError,
)
from .detectors import (
    DelayResult,
    DetectorVerdict,
    ScanGrid,
    np_detector,
    np_gamma,
    self_normalizer,
    sn_detector,
    twin_detector,
    twin_gamma,
    twin_weight,
)
from .monitoring import MonitorReport, detector_trace, monitor
from .state import StreamState

__version__ = "0.1.0"
