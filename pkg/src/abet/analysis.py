"""Model-behavior experiments: where do OOD detectors fail?

The three operations here quantify the observation that detection failures
concentrate on misclassified ID samples: split FPR@95 by prediction
correctness, measure classifier accuracy on the ID points nearest to OOD
samples in feature space, and compare score confidence intervals between the
correct and misclassified ID populations.
"""

from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import DimensionError, DomainError
from .metrics import ScoredSet, fpr_at_tpr
from .numerics import as_matrix, as_vector


@dataclass(frozen=True)
class ConfidenceInterval:
    mean: float
    half_width: float
    level: float
    n: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "half_width": self.half_width, "level": self.level, "n": self.n}

    def disjoint_from(self, other: "ConfidenceInterval") -> bool:
        lo, hi = self.mean - self.half_width, self.mean + self.half_width
        olo, ohi = other.mean - other.half_width, other.mean + other.half_width
        return hi < olo or ohi < lo


def score_confidence_interval(scores, level: float = 0.99) -> ConfidenceInterval:
    """Normal-approximation interval mean +/- z * s / sqrt(n), with s the
    (n - 1)-denominator sample standard deviation."""
    vals = as_vector(scores, "scores")
    if vals.size < 2:
        raise DomainError("confidence interval needs n >= 2")
    if not 0.0 < level < 1.0:
        raise DomainError("level must be in (0, 1)")
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    s = float(vals.std(ddof=1))
    return ConfidenceInterval(
        mean=float(vals.mean()),
        half_width=z * s / float(np.sqrt(vals.size)),
        level=level,
        n=int(vals.size),
    )


def misclassified_split_eval(id_scores_by_scorer, correct, ood_scores_by_scorer,
                             tpr_target: float = 0.95) -> dict:
    """FPR@95 of each scorer on the correct and the misclassified ID subsets,
    each against the same OOD scores.

    `correct` flags per ID sample whether the classifier was right. A side
    with no samples is reported as None rather than raising.
    """
    flags = np.asarray(correct, dtype=bool).ravel()
    out: dict = {
        "n_correct": int(flags.sum()),
        "n_misclassified": int((~flags).sum()),
        "scorers": {},
    }
    for name, id_scores in id_scores_by_scorer.items():
        scores = as_vector(id_scores, f"{name} id scores")
        if scores.size != flags.size:
            raise DimensionError(f"{name}: {scores.size} scores for {flags.size} correctness flags")
        ood = as_vector(ood_scores_by_scorer[name], f"{name} ood scores")
        entry = {}
        for tag, side in (("fpr95_correct_vs_ood", scores[flags]),
                          ("fpr95_misclassified_vs_ood", scores[~flags])):
            if side.size == 0:
                entry[tag] = None
            else:
                entry[tag] = fpr_at_tpr(ScoredSet(side, ood), tpr_target)
        out["scorers"][name] = entry
    return out


def nearest_id_indices(id_features, ood_features) -> np.ndarray:
    """Index of the 1-nearest ID row (Euclidean) for every OOD row; ties
    break toward the lower ID index."""
    bank = as_matrix(id_features, "id features")
    queries = as_matrix(ood_features, "ood features")
    if bank.shape[1] != queries.shape[1]:
        raise DimensionError("feature dimensions differ")
    out = np.empty(queries.shape[0], dtype=np.int64)
    chunk = max(1, int(4_000_000 // max(1, bank.shape[0] * bank.shape[1])))
    for start in range(0, queries.shape[0], chunk):
        block = queries[start:start + chunk]
        d2 = ((block[:, None, :] - bank[None, :, :]) ** 2).sum(axis=2)
        out[start:start + block.shape[0]] = np.argmin(d2, axis=1)
    return out


def ood_proximal_accuracy(id_features, id_correct, ood_features) -> tuple[float, float]:
    """Accuracy over the ID points selected (with multiplicity) as 1-NN of
    the OOD points, next to the overall ID accuracy."""
    flags = np.asarray(id_correct, dtype=bool).ravel()
    bank = as_matrix(id_features, "id features")
    if flags.size != bank.shape[0]:
        raise DimensionError("correctness flags do not match ID rows")
    selected = nearest_id_indices(bank, ood_features)
    return float(flags[selected].mean()), float(flags.mean())
