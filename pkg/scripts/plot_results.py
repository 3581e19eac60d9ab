"""Plot result files written by ``twinmon simulate``.

    python scripts/plot_results.py fig1.csv --out delays.png
    python scripts/plot_results.py fig2.csv --out epidemic.png

Delay files (one k_star per experiment) become quartile box plots; files
with a duration column become rejection-rate curves. Needs matplotlib,
which is not a dependency of the package.
"""
import argparse
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from twinmon.simlab import read_results  # noqa: E402


def _f(v):
    return float("nan") if v in ("", None) else float(v)


def plot_delays(rows, ax_list):
    by_k = defaultdict(list)
    for r in rows:
        by_k[int(r["k_star"])].append(r)
    for ax, (k_star, group) in zip(ax_list, sorted(by_k.items())):
        stats = []
        for r in group:
            q1, med, q3 = _f(r["delay_p25"]), _f(r["delay_p50"]), _f(r["delay_p75"])
            stats.append({"label": r["detector"], "q1": q1, "med": med, "q3": q3,
                          "whislo": q1, "whishi": q3, "fliers": []})
        ax.bxp(stats, showfliers=False)
        ax.set_yscale("log")
        ax.set_title(f"k* = {k_star}")
        ax.set_ylabel("delay")


def plot_epidemic(rows, ax):
    curves = defaultdict(list)
    for r in rows:
        curves[r["detector"]].append((_f(r["duration"]), 100 * _f(r["rejection_rate"])))
    for det, pts in curves.items():
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", ms=3, label=det)
    ax.set_xlabel("duration D")
    ax.set_ylabel("rejection rate (%)")
    ax.legend(ncol=2, fontsize=8)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("results")
    ap.add_argument("--out", default="plot.png")
    args = ap.parse_args()
    rows = read_results(args.results)
    if any(r["duration"] not in ("", None) for r in rows):
        fig, ax = plt.subplots(figsize=(6, 4))
        plot_epidemic(rows, ax)
    else:
        n_panels = len({r["k_star"] for r in rows})
        cols = min(2, n_panels)
        n_rows = (n_panels + cols - 1) // cols
        fig, axes = plt.subplots(n_rows, cols, figsize=(6 * cols, 4 * n_rows), squeeze=False)
        plot_delays(rows, axes.ravel())
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(args.out)


if __name__ == "__main__":
    main()
