"""ID/OOD separation metrics, exact and histogram-streamed.

Conventions (fixed here once so every number in the package agrees):

* scores follow "higher = more OOD";
* FPR@95 and AUROC treat ID as the positive class, ranked by idness
  (the negated score); ties count one half;
* average precision defaults to ID-positive, with a flag because the
  per-pixel evaluation convention is OOD-positive;
* thresholds are chosen among observed scores only, never interpolated,
  and comparisons at a threshold are >=-inclusive.

The histogram path bins normalized scores into `bin_count` even bins over
[0, 1] (top edge inclusive), rescales the counts proportionally when the
total exceeds 1e7, and then runs the same weighted formulas the exact path
uses with every bin as one tied group, which is mathematically identical to
expanding the bins back into lists.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .numerics import as_vector

COUNT_CAP = 1.0e7
DEFAULT_BIN_COUNT = 100


@dataclass(frozen=True)
class ScoredSet:
    """Finite score collections for the ID and OOD sides (higher = more OOD)."""

    id_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "id_scores", as_vector(self.id_scores, "id scores"))
        object.__setattr__(self, "ood_scores", as_vector(self.ood_scores, "ood scores"))


@dataclass(frozen=True)
class HistogramPair:
    """Weighted per-bin counts of normalized ID and OOD scores."""

    bin_count: int
    id_counts: np.ndarray
    ood_counts: np.ndarray
    low: float                 # normalization interval actually used
    high: float
    degenerate: bool = False   # max == min: all mass fell into bin 0


@dataclass(frozen=True)
class MetricsReport:
    auroc: float
    auprc: float
    fpr_at_95tpr: float
    method: str                  # "exact" | "histogram"
    auroc_positive: str = "id"
    auprc_positive: str = "id"
    n_id: float = 0.0
    n_ood: float = 0.0
    degenerate_range: bool = False

    def to_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "auprc": self.auprc,
            "fpr_at_95tpr": self.fpr_at_95tpr,
            "method": self.method,
            "auroc_positive": self.auroc_positive,
            "auprc_positive": self.auprc_positive,
            "n_id": self.n_id,
            "n_ood": self.n_ood,
            "degenerate_range": self.degenerate_range,
        }


def _check_positive(positive: str) -> str:
    if positive not in ("id", "ood"):
        raise DomainError(f"positive class must be 'id' or 'ood', got {positive!r}")
    return positive


def _weighted_rank_auc(pos_vals, pos_w, neg_vals, neg_w) -> float:
    """P(pos > neg) + 0.5 P(pos == neg) over weighted score groups."""
    values = np.unique(np.concatenate([pos_vals, neg_vals]))
    pos_at = np.zeros(values.size)
    neg_at = np.zeros(values.size)
    np.add.at(pos_at, np.searchsorted(values, pos_vals), pos_w)
    np.add.at(neg_at, np.searchsorted(values, neg_vals), neg_w)
    neg_below = np.concatenate([[0.0], np.cumsum(neg_at)[:-1]])
    total_pos = pos_at.sum()
    total_neg = neg_at.sum()
    if total_pos <= 0 or total_neg <= 0:
        raise DomainError("both sides need positive mass")
    wins = float((pos_at * (neg_below + 0.5 * neg_at)).sum())
    return wins / (total_pos * total_neg)


def _weighted_average_precision(pos_vals, pos_w, neg_vals, neg_w) -> float:
    """Step-curve AP: groups of tied scores in descending order, AP =
    sum over groups of (delta recall) * (precision at the group)."""
    values = np.unique(np.concatenate([pos_vals, neg_vals]))[::-1]
    pos_at = np.zeros(values.size)
    neg_at = np.zeros(values.size)
    idx = np.searchsorted(-values, -np.asarray(pos_vals, dtype=np.float64))
    np.add.at(pos_at, idx, pos_w)
    idx = np.searchsorted(-values, -np.asarray(neg_vals, dtype=np.float64))
    np.add.at(neg_at, idx, neg_w)
    total_pos = pos_at.sum()
    if total_pos <= 0:
        raise DomainError("positive side needs positive mass")
    ap = 0.0
    tp = 0.0
    fp = 0.0
    prev_recall = 0.0
    for g in range(values.size):
        if pos_at[g] == 0.0 and neg_at[g] == 0.0:
            continue
        tp += pos_at[g]
        fp += neg_at[g]
        recall = tp / total_pos
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def _weighted_fpr_at_tpr(id_idness, id_w, ood_idness, ood_w, tpr_target: float) -> float:
    """Largest observed idness threshold accepting >= target ID mass, then the
    OOD mass at or above it."""
    order = np.argsort(id_idness)[::-1]
    vals = np.asarray(id_idness, dtype=np.float64)[order]
    weights = np.asarray(id_w, dtype=np.float64)[order]
    total_id = weights.sum()
    total_ood = np.sum(ood_w)
    if total_id <= 0 or total_ood <= 0:
        raise DomainError("both sides need positive mass")
    cum = np.cumsum(weights)
    # group ties: a threshold accepts every sample with idness >= it
    threshold = None
    for i in range(vals.size):
        if i + 1 < vals.size and vals[i + 1] == vals[i]:
            continue
        if cum[i] / total_id >= tpr_target:
            threshold = vals[i]
            break
    if threshold is None:  # cannot happen for tpr_target <= 1, kept for safety
        threshold = -math.inf
    accepted_ood = float(np.sum(np.asarray(ood_w)[np.asarray(ood_idness) >= threshold]))
    return accepted_ood / total_ood


def auroc_exact(s: ScoredSet, positive: str = "id") -> float:
    """Probability that a random positive outranks a random negative in the
    positive class's natural direction; ties count one half. Symmetric in the
    choice of positive class."""
    _check_positive(positive)
    if positive == "id":
        pos, neg = -s.id_scores, -s.ood_scores
    else:
        pos, neg = s.ood_scores, s.id_scores
    return _weighted_rank_auc(pos, np.ones(pos.size), neg, np.ones(neg.size))


def auprc_exact(s: ScoredSet, positive: str = "id") -> float:
    """Average precision of the positive class under its natural direction."""
    _check_positive(positive)
    if positive == "id":
        pos, neg = -s.id_scores, -s.ood_scores
    else:
        pos, neg = s.ood_scores, s.id_scores
    return _weighted_average_precision(pos, np.ones(pos.size), neg, np.ones(neg.size))


def fpr_at_tpr(s: ScoredSet, tpr_target: float = 0.95) -> float:
    """FPR on OOD at the largest idness threshold keeping >= tpr_target of ID."""
    if not 0.0 < tpr_target <= 1.0:
        raise DomainError("tpr_target must be in (0, 1]")
    return _weighted_fpr_at_tpr(
        -s.id_scores, np.ones(s.id_scores.size),
        -s.ood_scores, np.ones(s.ood_scores.size), tpr_target,
    )


def build_histograms(s: ScoredSet, bin_count: int = DEFAULT_BIN_COUNT,
                     bounds: tuple[float, float] | None = None) -> HistogramPair:
    """Normalize scores to [0, 1] and bin them.

    `bounds` gives the analytic score range when the scorer has one (the
    normalized entropy is already [0, 1]; the negated max softmax lies in
    [-1, -1/C]); otherwise the combined min-max over both sides is used
    (a second pass over the data). The top bin edge is inclusive. When the
    combined count exceeds 1e7 both histograms are scaled proportionally so
    the total is exactly 1e7.
    """
    if bin_count < 1:
        raise DomainError("bin_count must be >= 1")
    if bounds is None:
        low = float(min(s.id_scores.min(), s.ood_scores.min()))
        high = float(max(s.id_scores.max(), s.ood_scores.max()))
    else:
        low, high = float(bounds[0]), float(bounds[1])
        if not high > low:
            raise DomainError("analytic bounds must satisfy high > low")
    degenerate = high <= low
    id_counts = np.zeros(bin_count)
    ood_counts = np.zeros(bin_count)
    if degenerate:
        id_counts[0] = s.id_scores.size
        ood_counts[0] = s.ood_scores.size
    else:
        for scores, counts in ((s.id_scores, id_counts), (s.ood_scores, ood_counts)):
            x = np.clip((scores - low) / (high - low), 0.0, 1.0)
            bins = np.minimum((x * bin_count).astype(np.int64), bin_count - 1)
            np.add.at(counts, bins, 1.0)
    total = id_counts.sum() + ood_counts.sum()
    if total > COUNT_CAP:
        scale = COUNT_CAP / total
        id_counts *= scale
        ood_counts *= scale
    return HistogramPair(bin_count=bin_count, id_counts=id_counts, ood_counts=ood_counts,
                         low=low, high=high, degenerate=degenerate)


def metrics_from_histograms(h: HistogramPair, tpr_target: float = 0.95,
                            auprc_positive: str = "id") -> MetricsReport:
    """Metrics over the binned representation: every bin is one tied score
    group at its bin index, counted with its (possibly fractional) weight."""
    _check_positive(auprc_positive)
    occupied_id = h.id_counts > 0
    occupied_ood = h.ood_counts > 0
    idx = np.arange(h.bin_count, dtype=np.float64)  # bin index as oodness value
    id_vals, id_w = idx[occupied_id], h.id_counts[occupied_id]
    ood_vals, ood_w = idx[occupied_ood], h.ood_counts[occupied_ood]
    if id_w.size == 0 or ood_w.size == 0:
        raise DomainError("both histograms need positive mass")
    auroc = _weighted_rank_auc(-id_vals, id_w, -ood_vals, ood_w)
    if auprc_positive == "id":
        auprc = _weighted_average_precision(-id_vals, id_w, -ood_vals, ood_w)
    else:
        auprc = _weighted_average_precision(ood_vals, ood_w, id_vals, id_w)
    fpr = _weighted_fpr_at_tpr(-id_vals, id_w, -ood_vals, ood_w, tpr_target)
    return MetricsReport(
        auroc=auroc, auprc=auprc, fpr_at_95tpr=fpr, method="histogram",
        auprc_positive=auprc_positive,
        n_id=float(h.id_counts.sum()), n_ood=float(h.ood_counts.sum()),
        degenerate_range=h.degenerate,
    )


def metrics_exact(s: ScoredSet, tpr_target: float = 0.95, auprc_positive: str = "id") -> MetricsReport:
    """The three exact metrics in one report."""
    return MetricsReport(
        auroc=auroc_exact(s, "id"),
        auprc=auprc_exact(s, auprc_positive),
        fpr_at_95tpr=fpr_at_tpr(s, tpr_target),
        method="exact",
        auprc_positive=auprc_positive,
        n_id=float(s.id_scores.size),
        n_ood=float(s.ood_scores.size),
    )


def analytic_bounds(scorer: str, num_classes: int | None = None) -> tuple[float, float] | None:
    """Closed score range for scorers that have one, else None (min-max)."""
    if scorer == "entropy":
        return (0.0, 1.0)
    if scorer == "temperature":
        return (0.0, 1.0)
    if scorer == "msp":
        if num_classes is None or num_classes < 2:
            return None
        return (-1.0, -1.0 / num_classes)
    return None
