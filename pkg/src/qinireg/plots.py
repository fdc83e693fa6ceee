"""Figure rendering for reports: Qini curve and per-bin uplift barplot.

Figures are written with matplotlib; SVG output is kept byte-stable across
runs (fixed hash salt, no embedded date) so report files can be golden-tested.
Each curve point carries the element id ``qini-point-<j>`` and each bar
``uplift-bar-<k>``.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .metrics import BinTable, QiniCurve  # noqa: E402

_RC = {"svg.hashsalt": "qinireg", "figure.figsize": (6.0, 4.0)}


def _save(fig, path) -> None:
    path = Path(path)
    metadata = {"Date": None} if path.suffix.lower() == ".svg" else None
    fig.savefig(path, metadata=metadata)
    plt.close(fig)


def save_qini_curve(curve: QiniCurve, path) -> None:
    """Curve with its random-targeting diagonal reference line."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.plot(curve.grid, curve.values, color="#1f5fa8", lw=1.5, zorder=2)
        for j, (x, y) in enumerate(zip(curve.grid, curve.values)):
            ax.plot([x], [y], marker="o", ms=4.5, color="#1f5fa8",
                    gid=f"qini-point-{j}", zorder=3)
        ax.plot([0.0, 1.0], [0.0, curve.overall], ls="--", color="0.5",
                gid="random-targeting", zorder=1)
        ax.set_xlabel("Proportion of population targeted")
        ax.set_ylabel("Relative incremental uplift")
        ax.set_xlim(0.0, 1.0)
        fig.tight_layout()
        _save(fig, path)


def save_bin_barplot(bins: BinTable, path) -> None:
    """Observed uplift per predicted-uplift bin, best bin first."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        j = bins.n_bins
        edges = [100.0 * k / j for k in range(j + 1)]
        labels = [f"{edges[k]:g}-{edges[k + 1]:g}%" for k in range(j)]
        bars = ax.bar(range(1, j + 1), bins.obs_uplift, color="#b5b5b5",
                      edgecolor="#333333")
        for k, bar in enumerate(bars):
            bar.set_gid(f"uplift-bar-{k}")
        ax.axhline(0.0, color="0.3", lw=0.8)
        ax.set_xticks(range(1, j + 1), labels, rotation=45 if j > 6 else 0)
        ax.set_xlabel("Population targeted")
        ax.set_ylabel("Observed uplift")
        fig.tight_layout()
        _save(fig, path)


def save_cv_curve(lambdas, mean, se, chosen_lambda, path, metric_label="metric") -> None:
    """Cross-validation profile: per-penalty mean with one-standard-error bars."""
    import numpy as np

    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        logl = np.log10(np.asarray(lambdas, dtype=float))
        ax.errorbar(logl, mean, yerr=se, fmt="o-", ms=3, lw=1,
                    color="#1f5fa8", ecolor="#9bb8d8", capsize=2)
        ax.axvline(np.log10(chosen_lambda), ls="--", color="0.4", gid="chosen-lambda")
        ax.set_xlabel("log10(penalty)")
        ax.set_ylabel(f"cross-validated {metric_label}")
        fig.tight_layout()
        _save(fig, path)
