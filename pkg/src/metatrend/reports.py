"""Matplotlib figures rendered next to the delimited outputs."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path


def sigma_ratio_figure(values_by_year: dict[int, list[float]], path: Path) -> Path:
    """Per-year box plot of the sigma/price ratio distribution."""
    years = sorted(values_by_year)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.boxplot([values_by_year[y] for y in years], tick_labels=[str(y) for y in years],
               whis=(0, 100), showfliers=False)
    ax.set_xlabel("year")
    ax.set_ylabel("sigma / close")
    ax.set_title("Dispersion of the labeling threshold by year")
    ax.grid(True, axis="y", alpha=0.3)
    return _save(fig, path)


def meta_loss_figure(loss_log: list[tuple[int, float, float]], path: Path) -> Path:
    """Meta loss per outer step with the annealed learning rate overlaid."""
    steps = [s for s, _, _ in loss_log]
    losses = [l for _, _, l in loss_log]
    lrs = [lr for _, lr, _ in loss_log]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, color="tab:blue", label="meta loss")
    ax.set_xlabel("outer step")
    ax.set_ylabel("summed query loss")
    ax.grid(True, alpha=0.3)
    ax2 = ax.twinx()
    ax2.plot(steps, lrs, color="tab:orange", alpha=0.6, label="learning rate")
    ax2.set_ylabel("learning rate")
    lines1, labels1 = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines1 + lines2, labels1 + labels2, loc="upper right")
    return _save(fig, path)


def equity_figure(curves: dict[str, "EquityCurve"], path: Path) -> Path:
    """Cumulative portfolio value per run on one axis."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for run in sorted(curves):
        curve = curves[run]
        dates = [d for d, _ in curve.points]
        values = [v / curve.initial for _, v in curve.points]
        ax.plot(dates, values, label=run)
    ax.set_xlabel("date")
    ax.set_ylabel("portfolio value (normalized)")
    ax.set_title("Cumulative return of the trading strategy")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.autofmt_xdate()
    return _save(fig, path)


def metrics_figure(metrics_by_run: dict[str, dict], path: Path) -> Path:
    """Grouped bars of the headline metrics at both label levels."""
    runs = sorted(metrics_by_run)
    keys = [
        ("four_level", "regular_accuracy"),
        ("four_level", "balanced_accuracy"),
        ("four_level", "weighted_f1"),
        ("two_level", "regular_accuracy"),
    ]
    labels = ["4L accuracy", "4L balanced", "4L weighted F1", "2L accuracy"]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    width = 0.8 / max(len(runs), 1)
    for i, run in enumerate(runs):
        values = [metrics_by_run[run][lvl][metric] for lvl, metric in keys]
        positions = [j + i * width for j in range(len(keys))]
        ax.bar(positions, values, width=width, label=run)
    ax.set_xticks([j + width * (len(runs) - 1) / 2 for j in range(len(keys))])
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    return _save(fig, path)
