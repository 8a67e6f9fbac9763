"""OOD scores and post-hoc transforms.

Every scorer follows one convention: higher value = more OOD. Scores whose
native direction is the opposite (max softmax, max logit, ...) are negated.

Scorers operating on model outputs take the arrays produced by
`model.extract` ("penultimate", "raw_logits", "temperature",
"tempered_logits", "probs"). The transforms (ReAct clipping, DICE weight
masking, percentile pruning, gradient input perturbation) modify features,
weights, or inputs and re-enter the model head before scoring.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .errors import ContractError, DimensionError, DomainError, FitError
from .numerics import as_matrix, cholesky_factor, cholesky_solve, logsumexp_rows, percentile, softmax_rows


@dataclass(frozen=True)
class PosthocConfig:
    """Knobs for the fitted scorers and transforms."""

    react_percentile: float = 90.0
    dice_keep_fraction: float = 0.10
    ash_prune_percentile: float = 90.0
    odin_epsilon: float = 0.0
    knn_k: int = 50
    knn_normalize: bool = True
    scalar_temperature: float = 1.0
    mahalanobis_ridge: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.react_percentile <= 100.0:
            raise DomainError("react_percentile must be in [0, 100]")
        if not 0.0 <= self.ash_prune_percentile <= 100.0:
            raise DomainError("ash_prune_percentile must be in [0, 100]")
        if not 0.0 < self.dice_keep_fraction <= 1.0:
            raise DomainError("dice_keep_fraction must be in (0, 1]")
        if self.odin_epsilon < 0.0:
            raise DomainError("odin_epsilon must be >= 0")
        if self.scalar_temperature <= 0.0:
            raise DomainError("scalar_temperature must be > 0")
        if self.knn_k < 1:
            raise DomainError("knn_k must be >= 1")


def _rows(x, name: str) -> np.ndarray:
    """Accept a single row or a stack of rows; always return 2-D."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    a = as_matrix(a, name)
    if a.shape[1] == 0:
        raise DomainError(f"{name} must have at least one column")
    return a


def abet(tempered_logits) -> np.ndarray:
    """Negated log-sum-exp of the temperature-divided logits."""
    return -logsumexp_rows(_rows(tempered_logits, "tempered logits"))


def energy_learned(tempered_logits, temperature) -> np.ndarray:
    """Two-temperature energy: the learned temperature both divides the
    logits and multiplies the log-sum-exp up front. Equals T * abet."""
    logits = _rows(tempered_logits, "tempered logits")
    t = np.asarray(temperature, dtype=np.float64).ravel()
    if t.size == 1 and logits.shape[0] > 1:
        t = np.full(logits.shape[0], t[0])
    if t.shape[0] != logits.shape[0]:
        raise DimensionError("temperature length does not match logit rows")
    if np.any(t <= 0.0):
        raise DomainError("temperature must be positive")
    return t * abet(logits)


def energy_scalar(raw_logits, t_scalar: float = 1.0) -> np.ndarray:
    """Scalar-temperature energy -T * log(sum(exp(g / T)))."""
    if t_scalar <= 0.0:
        raise DomainError("scalar temperature must be > 0")
    g = _rows(raw_logits, "raw logits")
    return -t_scalar * logsumexp_rows(g / t_scalar)


def msp(probs) -> np.ndarray:
    """Negated maximum softmax probability."""
    p = _rows(probs, "probabilities")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ContractError("probability rows must sum to 1 within 1e-6")
    return -p.max(axis=1)


def max_logit(raw_logits) -> np.ndarray:
    """Negated maximum raw logit."""
    return -_rows(raw_logits, "raw logits").max(axis=1)


def entropy_norm(probs) -> np.ndarray:
    """Softmax entropy divided by log(C); 0 * log 0 counts as 0."""
    p = _rows(probs, "probabilities")
    if p.shape[1] < 2:
        raise DomainError("entropy needs at least two classes")
    plogp = np.where(p > 0.0, p * np.log(np.maximum(p, 1e-300)), 0.0)
    return -plogp.sum(axis=1) / math.log(p.shape[1])


def temp_score(temperature) -> np.ndarray:
    """The learned temperature itself (higher = less confident = more OOD)."""
    return np.asarray(temperature, dtype=np.float64).ravel().copy()


# -- fitted scorers ----------------------------------------------------------


@dataclass(frozen=True)
class MahalanobisScorer:
    means: np.ndarray            # (C, p)
    covariance_factor: np.ndarray  # lower Cholesky of the ridged tied covariance
    ridge: float


def fit_mahalanobis(features, labels, ridge: float = 1e-6) -> MahalanobisScorer:
    """Class means plus tied covariance of the penultimate features.

    The covariance is the sample-count-weighted pool of the per-class scatter
    ((1/N) sum of (f - mu_c)(f - mu_c)^T) with a ridge of
    `ridge * trace / p` added to the diagonal before factorization.
    """
    f = as_matrix(features, "features")
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.shape[0] != f.shape[0]:
        raise DimensionError("labels do not match feature rows")
    classes = np.unique(y)
    p = f.shape[1]
    means = np.zeros((classes.size, p))
    scatter = np.zeros((p, p))
    for i, c in enumerate(classes):
        rows = f[y == c]
        if rows.shape[0] < 2:
            raise FitError(f"class {c} has {rows.shape[0]} samples, need >= 2 for covariance pooling")
        means[i] = rows.mean(axis=0)
        centered = rows - means[i]
        scatter += centered.T @ centered
    cov = scatter / f.shape[0]
    lam = ridge * np.trace(cov) / p
    cov[np.diag_indices_from(cov)] += lam
    return MahalanobisScorer(means=means, covariance_factor=cholesky_factor(cov), ridge=lam)


def mahalanobis(fitted: MahalanobisScorer, features) -> np.ndarray:
    """Minimum squared Mahalanobis distance to any class mean."""
    f = _rows(features, "features")
    best = np.full(f.shape[0], np.inf)
    for mu in fitted.means:
        centered = f - mu
        solved = cholesky_solve(fitted.covariance_factor, centered.T)
        best = np.minimum(best, np.einsum("ij,ji->i", centered, solved))
    return best


@dataclass(frozen=True)
class KnnScorer:
    bank: np.ndarray
    k: int
    normalize: bool


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.where(norms > 0.0, norms, 1.0)


def fit_knn(features, k: int, normalize: bool = True) -> KnnScorer:
    """Store the (optionally L2-normalized) ID feature bank."""
    bank = as_matrix(features, "feature bank")
    if not 1 <= k <= bank.shape[0]:
        raise DomainError(f"k must be in [1, {bank.shape[0]}], got {k}")
    if normalize:
        bank = _unit_rows(bank)
    return KnnScorer(bank=bank, k=k, normalize=normalize)


def knn(fitted: KnnScorer, features) -> np.ndarray:
    """Euclidean distance to the k-th nearest bank vector (exact)."""
    q = _rows(features, "features")
    if fitted.normalize:
        q = _unit_rows(q)
    out = np.empty(q.shape[0])
    chunk = max(1, int(4_000_000 // max(1, fitted.bank.shape[0] * fitted.bank.shape[1])))
    for start in range(0, q.shape[0], chunk):
        block = q[start:start + chunk]
        d2 = ((block[:, None, :] - fitted.bank[None, :, :]) ** 2).sum(axis=2)
        d2.sort(axis=1)
        out[start:start + block.shape[0]] = np.sqrt(d2[:, fitted.k - 1])
    return out


@dataclass(frozen=True)
class SmlScorer:
    class_mean: np.ndarray
    class_std: np.ndarray
    seen: np.ndarray
    global_mean: float
    global_std: float


def fit_sml(raw_logits, predictions, num_classes: int | None = None) -> SmlScorer:
    """Per predicted class, mean and standard deviation of the max logit.

    Classes never predicted at fit time (or with degenerate spread) fall back
    to the global statistics at scoring time.
    """
    g = _rows(raw_logits, "raw logits")
    pred = np.asarray(predictions, dtype=np.int64).ravel()
    if pred.shape[0] != g.shape[0]:
        raise DimensionError("predictions do not match logit rows")
    c = num_classes if num_classes is not None else g.shape[1]
    max_logits = g.max(axis=1)
    mean = np.zeros(c)
    std = np.zeros(c)
    seen = np.zeros(c, dtype=bool)
    for cls in range(c):
        vals = max_logits[pred == cls]
        if vals.size:
            seen[cls] = True
            mean[cls] = vals.mean()
            std[cls] = vals.std()
    global_std = float(max_logits.std())
    return SmlScorer(
        class_mean=mean,
        class_std=std,
        seen=seen,
        global_mean=float(max_logits.mean()),
        global_std=global_std if global_std > 1e-12 else 1.0,
    )


def sml(fitted: SmlScorer, raw_logits) -> np.ndarray:
    """Negated z-score of the max logit under its predicted class statistics."""
    g = _rows(raw_logits, "raw logits")
    pred = np.argmax(g, axis=1)
    if g.shape[1] != fitted.class_mean.shape[0]:
        raise DimensionError("class count differs from the fitted statistics")
    max_logits = g.max(axis=1)
    seen = fitted.seen[pred]
    mu = np.where(seen, fitted.class_mean[pred], fitted.global_mean)
    sigma = np.where(seen, fitted.class_std[pred], fitted.global_std)
    sigma = np.where(sigma > 1e-12, sigma, fitted.global_std)
    return -(max_logits - mu) / sigma


# -- transforms --------------------------------------------------------------


@dataclass(frozen=True)
class ReactClip:
    limit: float  # +inf at percentile 100 (no clipping)


def fit_react(features, pct: float = 90.0) -> ReactClip:
    """Clip limit: nearest-rank percentile over all flattened ID activations."""
    f = as_matrix(features, "features")
    if pct >= 100.0:
        return ReactClip(limit=math.inf)
    return ReactClip(limit=percentile(f.ravel(), pct))


def apply_react(fitted: ReactClip, features) -> np.ndarray:
    """Elementwise min(f, limit)."""
    return np.minimum(_rows(features, "features"), fitted.limit)


@dataclass(frozen=True)
class DiceMask:
    mask: np.ndarray           # boolean, same shape as the head weights
    keep_fraction: float
    masked_weight: np.ndarray  # head weights with dropped entries zeroed
    head_kind: str
    head_bias: np.ndarray | None = field(default=None)


def fit_dice(head_weight, mean_activation, keep_fraction: float = 0.10,
             head_kind: str = "cosine", head_bias=None) -> DiceMask:
    """Keep, per class row, the top ceil(keep_fraction * p) weights by
    contribution (weight times mean ID activation); ties break toward the
    lower column index."""
    w = as_matrix(head_weight, "head weights")
    act = np.asarray(mean_activation, dtype=np.float64).ravel()
    if act.shape[0] != w.shape[1]:
        raise DimensionError("mean activation length does not match head columns")
    if not 0.0 < keep_fraction <= 1.0:
        raise DomainError("keep_fraction must be in (0, 1]")
    p = w.shape[1]
    keep = min(p, math.ceil(keep_fraction * p))
    contribution = w * act
    mask = np.zeros_like(w, dtype=bool)
    cols = np.arange(p)
    for row in range(w.shape[0]):
        order = np.lexsort((cols, -contribution[row]))  # value desc, then index asc
        mask[row, order[:keep]] = True
    return DiceMask(
        mask=mask,
        keep_fraction=keep_fraction,
        masked_weight=w * mask,
        head_kind=head_kind,
        head_bias=None if head_bias is None else np.asarray(head_bias, dtype=np.float64),
    )


def apply_dice(fitted: DiceMask, features) -> np.ndarray:
    """Raw logits recomputed with the masked head rows (the cosine head uses
    the masked rows' norms)."""
    f = _rows(features, "features")
    if fitted.head_kind == "inner_product":
        bias = 0.0 if fitted.head_bias is None else fitted.head_bias
        return f @ fitted.masked_weight.T + bias
    fn = _unit_rows(f)
    wn = _unit_rows(fitted.masked_weight)
    return fn @ wn.T


def apply_ash(features, prune_percentile: float = 90.0) -> np.ndarray:
    """Per row, zero entries strictly below the row's nearest-rank percentile."""
    f = _rows(features, "features")
    out = f.copy()
    for i in range(f.shape[0]):
        threshold = percentile(f[i], prune_percentile)
        out[i] = np.where(f[i] < threshold, 0.0, f[i])
    return out


def odin_perturb(params, x, epsilon: float) -> np.ndarray:
    """x - epsilon * sign(grad_x of -log p_yhat), yhat the predicted class.

    epsilon = 0 returns the input unchanged (bitwise)."""
    if epsilon < 0.0:
        raise DomainError("epsilon must be >= 0")
    rows = _rows(x, "inputs")
    if epsilon == 0.0:
        return rows.copy()
    out = rows.copy()
    for i in range(rows.shape[0]):
        grad = model_mod.input_gradient(params, rows[i])
        out[i] = rows[i] - epsilon * np.sign(grad).ravel()
    return out


# -- dispatch ----------------------------------------------------------------

SCORERS = (
    "abet", "energy_learned", "energy_scalar", "msp", "max_logit",
    "entropy", "temperature", "sml", "mahalanobis", "knn",
)
TRANSFORMS = ("react", "dice", "ash", "odin")

_NEED_FIT = {"sml", "mahalanobis", "knn"}


@dataclass(frozen=True)
class FittedState:
    """Frozen ID-derived state shared by one scoring run."""

    mahalanobis: MahalanobisScorer | None = None
    knn: KnnScorer | None = None
    sml: SmlScorer | None = None
    react: ReactClip | None = None
    dice: DiceMask | None = None


def fit_scorers(id_outputs, cfg: PosthocConfig = PosthocConfig(), labels=None,
                scorers=(), transforms=(), head_kind: str = "cosine", head_weight=None,
                head_bias=None) -> FittedState:
    """Fit whatever ID-derived state the requested scorers and transforms need.

    `id_outputs` holds the extract arrays of the ID (training) set. Mahalanobis
    needs `labels`; DICE needs the head weights.
    """
    if not isinstance(id_outputs, dict):
        id_outputs = id_outputs.arrays
    need = set(scorers)
    need_t = set(transforms)
    penultimate = id_outputs.get("penultimate")
    if penultimate is None and (need & {"mahalanobis", "knn"} or need_t & {"react", "dice"}):
        raise ContractError("fitting needs the ID 'penultimate' array")
    state: dict = {}
    if "mahalanobis" in need:
        if labels is None:
            raise FitError("mahalanobis needs ID labels at fit time")
        state["mahalanobis"] = fit_mahalanobis(penultimate, labels, cfg.mahalanobis_ridge)
    if "knn" in need:
        state["knn"] = fit_knn(penultimate, min(cfg.knn_k, np.asarray(penultimate).shape[0]), cfg.knn_normalize)
    if "sml" in need:
        logits = id_outputs["raw_logits"]
        state["sml"] = fit_sml(logits, np.argmax(id_outputs["probs"], axis=1))
    if "react" in need_t:
        state["react"] = fit_react(penultimate, cfg.react_percentile)
    if "dice" in need_t:
        if head_weight is None:
            raise FitError("dice needs the head weights at fit time")
        state["dice"] = fit_dice(head_weight, np.asarray(penultimate).mean(axis=0),
                                 cfg.dice_keep_fraction, head_kind, head_bias)
    return FittedState(**state)


def _score_from_arrays(scorer: str, arrays, cfg: PosthocConfig, fitted: FittedState) -> np.ndarray:
    def need(*names):
        missing = [n for n in names if n not in arrays]
        if missing:
            raise ContractError(f"scorer {scorer!r} needs array(s): {', '.join(missing)}")
        return [np.asarray(arrays[n], dtype=np.float64) for n in names]

    if scorer == "abet":
        if "tempered_logits" in arrays:
            return abet(arrays["tempered_logits"])
        raw, temp = need("raw_logits", "temperature")
        return abet(raw / temp[:, None])
    if scorer == "energy_learned":
        if "tempered_logits" in arrays:
            (temp,) = need("temperature")
            return energy_learned(arrays["tempered_logits"], temp)
        raw, temp = need("raw_logits", "temperature")
        return energy_learned(raw / temp[:, None], temp)
    if scorer == "energy_scalar":
        (raw,) = need("raw_logits")
        return energy_scalar(raw, cfg.scalar_temperature)
    if scorer == "msp":
        return msp(need("probs")[0])
    if scorer == "max_logit":
        return max_logit(need("raw_logits")[0])
    if scorer == "entropy":
        return entropy_norm(need("probs")[0])
    if scorer == "temperature":
        return temp_score(need("temperature")[0])
    if scorer == "sml":
        if fitted.sml is None:
            raise ContractError("sml requires fitted per-class statistics")
        return sml(fitted.sml, need("raw_logits")[0])
    if scorer == "mahalanobis":
        if fitted.mahalanobis is None:
            raise ContractError("mahalanobis requires a fitted scorer")
        return mahalanobis(fitted.mahalanobis, need("penultimate")[0])
    if scorer == "knn":
        if fitted.knn is None:
            raise ContractError("knn requires a fitted feature bank")
        return knn(fitted.knn, need("penultimate")[0])
    raise DomainError(f"unknown scorer {scorer!r}; known: {', '.join(SCORERS)}")


def score_batch(scorer: str, arrays, fitted: FittedState = FittedState(),
                cfg: PosthocConfig = PosthocConfig(), params=None,
                transform: str | None = None, freeze_temperature: bool = False,
                inputs=None) -> np.ndarray:
    """Score each row of a model-output dump; one value per sample.

    With a transform, the pipeline is: transform the features (or weights, or
    inputs), recompute logits and temperature through the model head, then
    score the recomputed outputs. `freeze_temperature` keeps the original
    temperature instead of recomputing it from transformed features.
    """
    if isinstance(arrays, dict):
        arrays = dict(arrays)
    else:  # FeatureDump
        arrays = dict(arrays.arrays)
    if transform in (None, "none"):
        return _score_from_arrays(scorer, arrays, cfg, fitted)
    if transform not in TRANSFORMS:
        raise DomainError(f"unknown transform {transform!r}; known: {', '.join(TRANSFORMS)}")
    if params is None:
        raise ContractError(f"transform {transform!r} needs model parameters to recompute the head")

    if transform == "odin":
        if inputs is None:
            raise ContractError("odin needs the raw inputs to perturb")
        perturbed = odin_perturb(params, inputs, cfg.odin_epsilon)
        new = model_mod.extract(params, perturbed).arrays
        return _score_from_arrays(scorer, new, cfg, fitted)

    if "penultimate" not in arrays:
        raise ContractError(f"transform {transform!r} needs array(s): penultimate")
    features = np.asarray(arrays["penultimate"], dtype=np.float64)
    override = None
    if freeze_temperature:
        if "temperature" not in arrays:
            raise ContractError("freeze_temperature needs the original temperature array")
        override = np.asarray(arrays["temperature"], dtype=np.float64)
    if transform == "react":
        if fitted.react is None:
            raise ContractError("react requires a fitted clip limit")
        new = model_mod.outputs_from_features(
            params, apply_react(fitted.react, features), temperature_override=override)
    elif transform == "ash":
        new = model_mod.outputs_from_features(
            params, apply_ash(features, cfg.ash_prune_percentile), temperature_override=override)
    else:  # dice
        if fitted.dice is None:
            raise ContractError("dice requires a fitted weight mask")
        new = model_mod.outputs_from_features(
            params, features, weight_mask=fitted.dice.mask, temperature_override=override)
    return _score_from_arrays(scorer, new, cfg, fitted)


def score_map(logit_map, temperature_map, scorer: str, cfg: PosthocConfig = PosthocConfig()) -> np.ndarray:
    """Apply a logit-based scorer independently at every pixel of an
    H x W x C logit map; per-box scoring is the H = n, W = 1 case."""
    logits = np.asarray(logit_map, dtype=np.float64)
    if logits.ndim != 3:
        raise DimensionError(f"logit map must be H x W x C, got shape {logits.shape}")
    h, w, c = logits.shape
    flat_logits = logits.reshape(h * w, c)
    if temperature_map is None:
        temp = np.ones(h * w)
    else:
        temp = np.asarray(temperature_map, dtype=np.float64)
        if temp.shape != (h, w):
            raise DimensionError(f"temperature map must be {h} x {w}, got {temp.shape}")
        temp = temp.reshape(h * w)
    tempered = flat_logits / temp[:, None]
    arrays = {
        "raw_logits": flat_logits,
        "temperature": temp,
        "tempered_logits": tempered,
        "probs": softmax_rows(tempered),
    }
    return _score_from_arrays(scorer, arrays, cfg, FittedState()).reshape(h, w)
