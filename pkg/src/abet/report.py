"""Figure rendering for the report command.

One figure per scorer: overlaid ID (blue) and OOD (red) score histograms with
the exact AUROC in the title, written as SVG next to a CSV of the bin counts.
"""

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import ScoredSet, auroc_exact, build_histograms  # noqa: E402


def render_report(id_scores, ood_scores, svg_path, csv_path, title: str = "",
                  bin_count: int = 50, bounds=None) -> float:
    """Write the histogram figure and the bin-count CSV; returns the AUROC."""
    s = ScoredSet(id_scores, ood_scores)
    auroc = auroc_exact(s)
    hist = build_histograms(s, bin_count=bin_count, bounds=bounds)
    width = (hist.high - hist.low) / bin_count if not hist.degenerate else 1.0
    edges = hist.low + width * np.arange(bin_count)

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(edges, hist.id_counts, width=width, align="edge",
           color="tab:blue", alpha=0.6, label=f"ID (n={int(hist.id_counts.sum())})")
    ax.bar(edges, hist.ood_counts, width=width, align="edge",
           color="tab:red", alpha=0.6, label=f"OOD (n={int(hist.ood_counts.sum())})")
    ax.set_xlabel("score (higher = more OOD)")
    ax.set_ylabel("count")
    label = f"{title}  " if title else ""
    ax.set_title(f"{label}AUROC = {auroc:.4f}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)

    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "id_count", "ood_count"])
        for i in range(bin_count):
            writer.writerow([
                repr(edges[i]), repr(edges[i] + width),
                repr(float(hist.id_counts[i])), repr(float(hist.ood_counts[i])),
            ])
    return auroc
