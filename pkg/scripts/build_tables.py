"""Regenerate the shipped critical-value tables (default tuning parameters)."""
import sys
import time

from twinmon.calibration import (
    null_sim_quantiles,
    shipped_table_path,
    simulate_L_F,
    simulate_L_SN,
    simulate_L_TC,
)

JOBS = {
    "L_SN": lambda: simulate_L_SN(),
    "L_TC": lambda: simulate_L_TC(),
    "C": lambda: null_sim_quantiles("C"),
    "PC": lambda: null_sim_quantiles("PC"),
    "FC": lambda: null_sim_quantiles("FC"),
    "MM": lambda: null_sim_quantiles("MM"),
    "WC": lambda: null_sim_quantiles("WC"),
    "L_F": lambda: simulate_L_F(),
}

if __name__ == "__main__":
    for name in sys.argv[1:] or JOBS:
        t0 = time.time()
        table = JOBS[name]()
        path = table.store(shipped_table_path(table.law))
        print(f"{name}: {time.time() - t0:.0f}s -> {path}", flush=True)
