"""Command-line entry point: ``twinmon {calibrate,monitor,simulate,analyze,tables}``.

Settings resolve as flag > ``TWINMON_*`` environment variable > ``--config``
JSON file > built-in default. Exit codes: 0 success, 2 usage or invalid
configuration, 3 data error, 4 table/configuration mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

from .config import ConfigError, DataError, Detector, MonitorConfig, Scale, TableMismatchError

log = logging.getLogger("twinmon")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TABLE = 0, 2, 3, 4

DEFAULTS = {
    "beta": 0.6,
    "c0": 20.0,
    "eta": 0.4,
    "b": 0.4,
    "alpha": 0.05,
    "n_train": 100,
    "seed": None,
    "threads": 1,
    "detector": "TC",
}
ENV_PREFIX = "TWINMON_"
TYPES = {"beta": float, "c0": float, "eta": float, "b": float, "alpha": float,
         "n_train": int, "seed": int, "threads": int, "detector": str, "horizon": int,
         "draws": int}


class Settings:
    """Layered lookup over flags, environment, config file and defaults."""

    def __init__(self, args: argparse.Namespace, defaults: dict):
        self.args = args
        self.file = {}
        if getattr(args, "config", None):
            try:
                self.file = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        self.defaults = defaults

    def get(self, key: str):
        v = getattr(self.args, key, None)
        if v is not None:
            return v
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            try:
                return TYPES.get(key, str)(env)
            except ValueError as exc:
                raise ConfigError(f"bad value for {ENV_PREFIX}{key.upper()}: {env!r}") from exc
        if key in self.file:
            return self.file[key]
        return self.defaults.get(key)


def _common(p: argparse.ArgumentParser, *names: str) -> None:
    flags = {
        "beta": dict(type=float, help="TWIN discount exponent (> 1/2)"),
        "c0": dict(type=float, help="TWIN weight offset (> 1)"),
        "eta": dict(type=float, help="baseline weight exponent in [0, 1/2)"),
        "b": dict(type=float, help="mMOSUM window fraction in (0, 1)"),
        "alpha": dict(type=float, help="nominal level"),
        "n-train": dict(type=int, dest="n_train", help="training sample size N"),
        "seed": dict(type=int, help="master random seed"),
        "threads": dict(type=int, help="worker threads (results do not depend on it)"),
        "detector": dict(help="TC, SNTC, NPTC, C, PC, FC, WC, MM or RC"),
        "horizon": dict(type=int, help="monitoring steps (multiples of N for simulate)"),
        "format": dict(choices=("csv", "json"), help="output format"),
    }
    for name in names:
        p.add_argument(f"--{name}", **flags[name])
    p.add_argument("--config", help="JSON file with default settings")
    _verbose(p)


def _verbose(p: argparse.ArgumentParser) -> None:
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twinmon", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="simulate a critical-value table")
    p.add_argument("--law", required=True, choices=("L_SN", "L_TC", "L_F", "NULL_SIM"))
    _common(p, "beta", "c0", "eta", "b", "seed", "threads", "detector", "horizon")
    p.add_argument("--draws", type=int)
    p.add_argument("--levels", help="comma-separated probability levels (default 0.90..0.99)")
    p.add_argument("--t-max", type=float, default=1000.0, help="Brownian time horizon")
    p.add_argument("--refine", type=int, default=0, help="halve the Brownian grid step this often")
    p.add_argument("--n-cal", type=int, help="sample size for finite-sample calibration")
    p.add_argument("--fast", action="store_true", help="short horizon for quick checks")
    p.add_argument("--out", help="table file to write")

    p = sub.add_parser("monitor", help="monitor a stream read from a file or stdin")
    _common(p, "beta", "c0", "eta", "b", "alpha", "n-train", "detector",
            "horizon")
    p.add_argument("--input", default="-", help="one value per line ('-' for stdin)")
    p.add_argument("--table", help="critical-value table (default: shipped table)")
    p.add_argument("--threshold", type=float, help="override the critical value")
    p.add_argument("--scale", help="known[:s2], train_variance, lrv[:lags]")
    p.add_argument("--orlicz", type=float, help="Orlicz norm of the noise (RC only)")
    p.add_argument("--rc-constant", type=float, default=1.0,
                   help="multiplier of the RC bound (RC only)")
    p.add_argument("--trace", action="store_true", help="emit one event per step")
    p.add_argument("--batch", type=int, default=1, help="steps evaluated per read")

    p = sub.add_parser("simulate", help="run a simulation spec file")
    p.add_argument("spec", help="spec file, or one of table2, table3, fig1, fig2")
    _common(p, "seed", "threads", "format")
    p.add_argument("--fast", action="store_true", help="reduced replication counts")
    p.add_argument("--replications", type=int)
    p.add_argument("--out", help="result file (default: <experiment>.<format>)")

    p = sub.add_parser("analyze", help="analyze a dated CSV series")
    _common(p, "beta", "c0", "eta", "b", "alpha")
    p.add_argument("--input", help="CSV with a date and a value column")
    p.add_argument("--demo", action="store_true", help="use the bundled synthetic series")
    p.add_argument("--date-col", default="date")
    p.add_argument("--value-col", default="value")
    p.add_argument("--date-format", help="strptime format (default ISO 8601)")
    p.add_argument("--training-days", "--n-train", type=int, dest="n_train")
    p.add_argument("--scale", default=None, help="monitoring_variance (default) or train_variance")
    p.add_argument("--detectors", help="comma-separated detector list")
    p.add_argument("--out", help="JSON report path (default stdout)")
    p.add_argument("--trace-dir", help="directory for per-detector trace CSVs")

    p = sub.add_parser("tables", help="list or show shipped tables")
    p.add_argument("name", nargs="?", help="law to show, e.g. L_SN or NULL_SIM(C)")
    p.add_argument("--path", help="show a table file instead")
    _verbose(p)
    return ap


# ---------------------------------------------------------------- commands


def _levels(text):
    from .calibration import DEFAULT_LEVELS

    if not text:
        return DEFAULT_LEVELS
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad --levels {text!r}") from exc


def _print_table(table, out=None) -> None:
    out = out or sys.stdout
    levels = table.levels
    head = "  ".join(f"{100 * lv:>6.0f}%" for lv in levels)
    vals = "  ".join(f"{table.quantiles[lv]:>7.3f}" for lv in levels)
    print(f"{table.law} {json.dumps(table.params)}  draws={table.draws}", file=out)
    print(head, file=out)
    print(vals, file=out)


def cmd_calibrate(args) -> int:
    from . import calibration as cal

    st = Settings(args, DEFAULTS)
    beta, c0 = float(st.get("beta")), float(st.get("c0"))
    levels = _levels(args.levels)
    threads = st.get("threads")
    seed = st.get("seed")
    draws = st.get("draws")
    kw = {"levels": levels}
    if seed is not None:
        kw["seed"] = int(seed)
    if draws is not None:
        kw["draws"] = int(draws)
    if kw.get("draws", 1000) < 1000:
        log.warning("tables from fewer than 1000 draws are for quick checks only")
    if args.law in ("L_SN", "L_TC"):
        t_max = 100.0 if args.fast else args.t_max
        grid = cal.GridSpec(t_max=t_max, refine=args.refine)
        fn = cal.simulate_L_SN if args.law == "L_SN" else cal.simulate_L_TC
        table = fn(beta, c0, grid, threads=threads, **kw)
    elif args.law == "L_F":
        n_cal = args.n_cal or (100 if args.fast else 200)
        horizon = st.get("horizon") or (5 if args.fast else 20)
        table = cal.simulate_L_F(beta, c0, n_cal=n_cal, t_horizon=horizon, **kw)
    else:
        det = Detector(str(st.get("detector")).upper())
        n_cal = args.n_cal or (100 if args.fast else 200)
        horizon = st.get("horizon") or 20
        table = cal.null_sim_quantiles(det, eta=float(st.get("eta")), b=float(st.get("b")),
                                       c0=c0, n_cal=n_cal, t_horizon=horizon, **kw)
    if args.out:
        table.store(args.out)
        log.info("wrote %s", args.out)
    _print_table(table)
    print(json.dumps({"fingerprint": table.fingerprint, "seed": table.seed,
                      "grid_spec": table.grid_spec}), file=sys.stderr)
    return EXIT_OK


def _read_values(path: str):
    """Yield floats from a file or stdin, skipping malformed lines with a warning."""
    fh = sys.stdin if path == "-" else open(path)
    bad = 0
    try:
        for i, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                v = float(text.split(",")[-1])
                if not math.isfinite(v):
                    raise ValueError
            except ValueError:
                bad += 1
                log.warning("line %d skipped: %r", i, text)
                continue
            yield v
    finally:
        if bad:
            log.warning("%d malformed line(s) skipped", bad)
        if fh is not sys.stdin:
            fh.close()


def _emit(event: dict) -> None:
    print(json.dumps(event), flush=True)


def cmd_monitor(args) -> int:
    from .calibration import QuantileTable
    from .monitoring import monitor

    st = Settings(args, DEFAULTS)
    det = Detector(str(st.get("detector")).upper())
    kw = dict(
        n_train=int(st.get("n_train")), beta=float(st.get("beta")), c0=float(st.get("c0")),
        eta=float(st.get("eta")), b_mosum=float(st.get("b")), alpha=float(st.get("alpha")),
        detector=det,
    )
    if args.scale:
        kw["scale"] = Scale.parse(args.scale)
    if det is Detector.RC:
        kw["orlicz_norm"] = args.orlicz
        kw["rc_constant"] = args.rc_constant
    cfg = MonitorConfig(**kw)
    table = QuantileTable.load(args.table, cfg) if args.table else None
    _emit({"event": "config", **cfg.to_dict(), "table": args.table or "shipped"})
    values = _read_values(args.input)
    first = next(values, None)
    if first is None:
        _emit({"event": "end", "verdict": "none", "reason": "no input"})
        return EXIT_OK

    def stream():
        yield first
        yield from values

    step = None
    if args.trace:
        def step(k, v, ell):
            _emit({"event": "step", "k": k, "statistic": v, "ell": ell})

    rep = monitor(stream(), cfg, table=table, threshold=args.threshold,
                  horizon=st.get("horizon"), batch=max(1, args.batch), on_step=step)
    v = rep.verdict
    if v.detected:
        _emit({"event": "alarm", "k_hat": v.k_hat, "ell_hat": v.ell_hat,
               "change_estimate": v.change_estimate, "statistic": v.statistic,
               "threshold": v.threshold, "sigma": rep.sigma})
    else:
        _emit({"event": "end", "verdict": "none", "steps": rep.steps, "sigma": rep.sigma})
    return EXIT_OK


SPEC_NAMES = ("table2", "table3", "fig1", "fig2")


def load_spec(name: str) -> dict:
    if name in SPEC_NAMES:
        text = (resources.files("twinmon") / "specs" / f"{name}.spec").read_text()
    else:
        try:
            text = Path(name).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read spec {name}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed spec {name}: {exc}") from exc


def _k_star(v, n: int) -> int:
    if isinstance(v, str):
        v = v.strip().upper()
        if v.endswith("N"):
            return int(round(float(v[:-1] or 1) * n))
        return int(v)
    return int(v)


def expand_spec(doc: dict, fast: bool = False, seed: int | None = None,
                replications: int | None = None) -> tuple[str, list, list]:
    """Experiment specs described by a spec document, plus epidemic durations."""
    from .simlab import ChangeSpec, ExperimentSpec, NoiseModel

    kind = doc.get("kind", "level")
    if kind not in ("level", "power", "delay", "epidemic"):
        raise ConfigError(f"unknown experiment kind {kind!r}")
    reps = replications or (doc.get("fast_replications", 200) if fast else doc.get("replications", 1000))
    seed = doc.get("seed", 1) if seed is None else seed
    dets = [Detector(str(d).upper()) for d in doc.get("detectors", ["NPTC", "TC"])]
    ns = doc.get("n_train", [100])
    ns = ns if isinstance(ns, list) else [ns]
    noises = doc.get("noise", ["normal"])
    noises = noises if isinstance(noises, list) else [noises]
    deltas = doc.get("delta", [0.0])
    deltas = deltas if isinstance(deltas, list) else [deltas]
    kstars = doc.get("k_star", [None])
    kstars = kstars if isinstance(kstars, list) else [kstars]
    out = []
    for n in ns:
        for noise in noises:
            for ks in kstars:
                for delta in deltas:
                    change = None
                    if kind != "level":
                        change = ChangeSpec(_k_star(ks, n), float(delta))
                    eid = f"{doc.get('experiment_id', kind)}_N{n}_{noise}"
                    if change is not None:
                        eid += f"_k{change.k_star}_d{delta:g}"
                    out.append(ExperimentSpec(
                        experiment_id=eid, n_train=int(n),
                        t_horizon=float(doc.get("t_horizon", 20)), change=change,
                        noise=NoiseModel.parse(noise), detectors=tuple(dets),
                        replications=int(reps), seed=int(seed),
                        alpha=float(doc.get("alpha", 0.05)),
                        rc_constant=float(doc.get("rc_constant", 1.0)),
                    ))
    return kind, out, list(doc.get("durations", []))


def cmd_simulate(args) -> int:
    from . import simlab

    st = Settings(args, DEFAULTS)
    doc = load_spec(args.spec)
    seed = st.get("seed")
    kind, specs, durations = expand_spec(doc, args.fast, seed, args.replications)
    fmt = st.get("format") or "csv"
    threads = int(st.get("threads") or 1)
    results = []
    t0 = time.time()
    for sp in specs:
        if kind == "level":
            results.append(simlab.run_level_experiment(sp, threads))
        elif kind == "power":
            results.append(simlab.run_power_experiment(sp, threads))
        elif kind == "delay":
            results.append(simlab.run_delay_experiment(sp, threads))
        else:
            results.extend(simlab.run_epidemic_experiment(sp, durations, threads))
        log.info("%s done (%.1fs)", sp.experiment_id, results[-1].runtime)
    out = args.out or f"{doc.get('experiment_id', kind)}.{fmt}"
    meta = {"spec": doc, "fast": args.fast, "seed": specs[0].seed if specs else None,
            "replications": specs[0].replications if specs else None,
            "runtime_s": round(time.time() - t0, 1)}
    simlab.emit_results(results, out, fmt, meta)
    print(json.dumps({"written": str(out), **{k: v for k, v in meta.items() if k != "spec"}}),
          file=sys.stderr)
    return EXIT_OK


def cmd_analyze(args) -> int:
    from . import pipeline

    st = Settings(args, {**DEFAULTS, "n_train": 31})
    if args.demo:
        records, _ = pipeline.synthetic_demo_records()
    elif args.input:
        records = pipeline.ingest_csv(args.input, args.date_col, args.value_col,
                                      args.date_format).records
    else:
        raise ConfigError("analyze needs --input or --demo")
    series = pipeline.aggregate_daily(records)
    dets = args.detectors.split(",") if args.detectors else pipeline.PIPELINE_DETECTORS
    report = pipeline.analyze(
        series, n_train=int(st.get("n_train")), detectors=[d.strip().upper() for d in dets],
        scale=args.scale or "monitoring_variance", alpha=float(st.get("alpha")),
        beta=float(st.get("beta")), c0=float(st.get("c0")), eta=float(st.get("eta")),
        b=float(st.get("b")),
    )
    if args.trace_dir:
        report.write_traces(args.trace_dir, series.dates)
    if args.out:
        report.write_json(args.out)
    else:
        print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_tables(args) -> int:
    from .calibration import QuantileTable, shipped_table_path

    if args.path:
        _print_table(QuantileTable.load(args.path))
        return EXIT_OK
    laws = ["L_SN", "L_TC", "L_F"] + [f"NULL_SIM({d})" for d in ("C", "PC", "FC", "WC", "MM")]
    if args.name:
        laws = [args.name]
    for law in laws:
        path = shipped_table_path(law)
        if not path.exists():
            print(f"{law}: not shipped")
            continue
        _print_table(QuantileTable.load(path))
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "monitor": cmd_monitor,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "tables": cmd_tables,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except TableMismatchError as exc:
        print(f"twinmon: table mismatch: {exc}", file=sys.stderr)
        return EXIT_TABLE
    except DataError as exc:
        print(f"twinmon: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError) as exc:
        print(f"twinmon: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
