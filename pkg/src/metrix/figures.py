"""Figure rendering for run outputs.

Each report-producing command writes a PNG next to its CSV so a run
directory can be inspected at a glance. Rendering is headless (Agg) and
purely cosmetic: the CSVs remain the canonical, bit-stable outputs.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["plot_metrics", "plot_positivity", "plot_ablation"]

plt.rcParams.update({
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
})


def plot_metrics(log, path):
    """Training curves: objective on the left axis, test recall on the right."""
    epochs = [row["epoch"] for row in log]
    fig, ax = plt.subplots()
    ax.plot(epochs, [row["train_loss"] for row in log],
            color="tab:gray", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss")
    ax2 = ax.twinx()
    for key, color in (("recall@1", "tab:blue"), ("recall@2", "tab:orange"),
                       ("recall@4", "tab:green")):
        ax2.plot(epochs, [row[key] for row in log], color=color, label=key)
    ax2.set_ylabel("test recall")
    ax2.set_ylim(0.0, 1.05)
    handles, labels = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    ax2.legend(handles + h2, labels + l2, loc="lower right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_positivity(curve, path):
    """Empirical vs threshold-based positivity probability over the grid."""
    fig, ax = plt.subplots()
    ax.plot(curve.lambdas, curve.empirical, marker="o", color="tab:red",
            label="empirical")
    ax.plot(curve.lambdas, curve.theoretical, marker="s", color="tab:blue",
            label="theoretical")
    ax.set_xlabel("interpolation factor")
    ax.set_ylabel("positivity probability")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_ablation(axis, values, recalls, baseline, path):
    """Recall@1 against the swept axis with the no-mixing baseline as a line."""
    fig, ax = plt.subplots()
    numeric = all(isinstance(v, (int, float)) for v in values)
    xs = values if numeric else range(len(values))
    ax.plot(xs, recalls, marker="o", color="tab:olive", label="with mixing")
    ax.axhline(baseline, color="tab:cyan", label="baseline")
    if not numeric:
        ax.set_xticks(list(xs))
        ax.set_xticklabels([str(v) for v in values])
    ax.set_xlabel(axis)
    ax.set_ylabel("recall@1")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
