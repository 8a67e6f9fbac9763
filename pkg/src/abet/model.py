"""Trainable classifier: MLP backbone, cosine or inner-product logit head,
and an input-dependent learned temperature.

Forward path per sample x:

    h_0 = x
    h_k = relu(h_{k-1} @ W_k + b_k)            hidden stack; f = h_last
    g_c = (w_c . f) / (|w_c| |f|)              cosine head (0 if a norm is 0)
        or  w_c . f + b_c                      inner-product head
    s   = w_t . f + b_t                        temperature scalar
    y   = gamma * norm(s) + beta               batch norm (batch stats in
                                               train mode, running in eval)
    T   = max(sigmoid(y), 1e-6)                in (1e-6, 1)
    L_c = g_c / T
    p   = softmax(L)

Training minimizes mean cross-entropy -log p_y. The backward pass is exact,
including the chain through the batch statistics and through the cosine
normalization of both the class weights and the features; it is verified
against central finite differences in the test suite.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, DomainError, FormatError
from .fdump import FeatureDump
from .numerics import softmax_rows
from .seeds import stream

CHECKPOINT_VERSION = "1"
TEMPERATURE_FLOOR = 1e-6
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_sizes: tuple[int, ...]
    penultimate_dim: int
    num_classes: int
    head_kind: str = "cosine"  # "cosine" | "inner_product"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        dims = (self.input_dim, self.penultimate_dim, *self.hidden_sizes)
        if any(d < 1 for d in dims):
            raise DomainError("all layer dimensions must be >= 1")
        if self.num_classes < 2:
            raise DomainError("num_classes must be >= 2")
        if self.head_kind not in ("cosine", "inner_product"):
            raise DomainError(f"unknown head_kind {self.head_kind!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every affine+ReLU layer, ending at the penultimate."""
        sizes = [self.input_dim, *self.hidden_sizes, self.penultimate_dim]
        return list(zip(sizes[:-1], sizes[1:]))


@dataclass
class ModelParams:
    """All stored parameter arrays; mutated in place by `train`."""

    config: ModelConfig
    weights: list[np.ndarray]      # per layer, (fan_in, fan_out)
    biases: list[np.ndarray]       # per layer, (fan_out,)
    head_weight: np.ndarray        # (num_classes, penultimate_dim)
    head_bias: np.ndarray | None   # (num_classes,), inner-product head only
    temp_weight: np.ndarray        # (penultimate_dim,)
    temp_bias: float
    bn_gamma: float
    bn_beta: float
    bn_running_mean: float
    bn_running_var: float
    bn_eps: float = BN_EPS
    bn_momentum: float = BN_MOMENTUM


@dataclass
class ForwardTrace:
    """Everything the backward pass needs from one forward evaluation."""

    mode: str
    batch: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]
    feature_norms: np.ndarray      # |f| per row
    raw_logits: np.ndarray
    temp_scalar: np.ndarray        # s, pre batch norm
    bn_mean: float                 # statistics actually used
    bn_var: float
    temp_normed: np.ndarray        # (s - mean) / sqrt(var + eps)
    temp_sigmoid: np.ndarray       # sigmoid(gamma * normed + beta), pre-floor
    temperature: np.ndarray
    tempered_logits: np.ndarray
    probs: np.ndarray

    @property
    def penultimate(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class Gradients:
    """Gradients of mean cross-entropy w.r.t. every trainable parameter."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head_weight: np.ndarray
    head_bias: np.ndarray | None
    temp_weight: np.ndarray
    temp_bias: float
    bn_gamma: float
    bn_beta: float


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    momentum: float = 0.9
    milestones: tuple[float, ...] = (0.5, 0.75, 0.9)  # fractions of total epochs
    decay_factor: float = 0.1
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be positive")
        if not 0.0 < self.decay_factor <= 1.0:
            raise DomainError("decay_factor must be in (0, 1]")
        if any(not 0.0 <= m <= 1.0 for m in self.milestones):
            raise DomainError("milestones are fractions of total epochs in [0, 1]")
        object.__setattr__(self, "milestones", tuple(float(m) for m in self.milestones))


def init_params(cfg: ModelConfig) -> ModelParams:
    """He-style init: weights ~ N(0, 2/fan_in), biases 0, BN at identity."""
    rng = stream(cfg.seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in cfg.layer_dims:
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    p = cfg.penultimate_dim
    head_weight = rng.standard_normal((cfg.num_classes, p)) * np.sqrt(2.0 / p)
    head_bias = np.zeros(cfg.num_classes) if cfg.head_kind == "inner_product" else None
    temp_weight = rng.standard_normal(p) * np.sqrt(2.0 / p)
    return ModelParams(
        config=cfg,
        weights=weights,
        biases=biases,
        head_weight=head_weight,
        head_bias=head_bias,
        temp_weight=temp_weight,
        temp_bias=0.0,
        bn_gamma=1.0,
        bn_beta=0.0,
        bn_running_mean=0.0,
        bn_running_var=1.0,
    )


def _sigmoid(y: np.ndarray) -> np.ndarray:
    out = np.empty_like(y)
    pos = y >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-y[pos]))
    ey = np.exp(y[~pos])
    out[~pos] = ey / (1.0 + ey)
    return out


def _normalize_rows(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows scaled to unit norm; zero rows stay zero. Returns (normed, norms)."""
    norms = np.linalg.norm(m, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    return m / safe[:, None], norms


def head_logits(params: ModelParams, features: np.ndarray, weight_mask: np.ndarray | None = None) -> np.ndarray:
    """Raw logits from penultimate features, optionally with masked head rows.

    Used both inside `forward` and by the post-hoc transforms, so a transform
    at its identity limit reproduces the baseline logits bit for bit.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.config.penultimate_dim:
        raise DimensionError(f"features must be (n, {params.config.penultimate_dim})")
    w = params.head_weight if weight_mask is None else params.head_weight * weight_mask
    if params.config.head_kind == "inner_product":
        return features @ w.T + params.head_bias
    fn, _ = _normalize_rows(features)
    wn, _ = _normalize_rows(w)
    return fn @ wn.T


def _temperature_path(params: ModelParams, features: np.ndarray, mode: str, update_running: bool):
    s = features @ params.temp_weight + params.temp_bias
    if mode == "train":
        mean = float(s.mean())
        var = float(s.var())
        if update_running:
            m = params.bn_momentum
            params.bn_running_mean = (1.0 - m) * params.bn_running_mean + m * mean
            params.bn_running_var = (1.0 - m) * params.bn_running_var + m * var
    else:
        mean = params.bn_running_mean
        var = params.bn_running_var
    normed = (s - mean) / np.sqrt(var + params.bn_eps)
    sig = _sigmoid(params.bn_gamma * normed + params.bn_beta)
    # floor per the score definition; ceiling one ulp under 1 because the
    # float sigmoid saturates to 1.0 exactly where its true value is 1 - eps
    temperature = np.clip(sig, TEMPERATURE_FLOOR, np.nextafter(1.0, 0.0))
    return s, mean, var, normed, sig, temperature


def forward(params: ModelParams, batch, mode: str = "eval", update_running: bool | None = None) -> ForwardTrace:
    """Run the network on a batch.

    In train mode the temperature batch norm uses batch statistics and (by
    default) updates the running statistics in place; eval mode reads the
    running statistics and never mutates `params`. Train mode needs at least
    two rows, otherwise the batch variance is meaningless.
    """
    if mode not in ("train", "eval"):
        raise DomainError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.config.input_dim:
        raise DimensionError(f"batch must be (n, {params.config.input_dim}), got {x.shape}")
    if mode == "train" and x.shape[0] < 2:
        raise ContractError("train-mode forward needs a batch of >= 2 rows")
    if update_running is None:
        update_running = mode == "train"

    pre_acts, acts = [], []
    h = x
    for w, b in zip(params.weights, params.biases):
        z = h @ w + b
        h = np.maximum(z, 0.0)
        pre_acts.append(z)
        acts.append(h)
    features = acts[-1]
    _, feature_norms = _normalize_rows(features)

    raw = head_logits(params, features)
    s, mean, var, normed, sig, temperature = _temperature_path(params, features, mode, update_running)
    tempered = raw / temperature[:, None]
    probs = softmax_rows(tempered)
    return ForwardTrace(
        mode=mode,
        batch=x,
        pre_activations=pre_acts,
        activations=acts,
        feature_norms=feature_norms,
        raw_logits=raw,
        temp_scalar=s,
        bn_mean=mean,
        bn_var=var,
        temp_normed=normed,
        temp_sigmoid=sig,
        temperature=temperature,
        tempered_logits=tempered,
        probs=probs,
    )


def loss_ce(trace: ForwardTrace, labels) -> float:
    """Mean cross-entropy -log p_y, with probabilities floored at 1e-300."""
    y = _check_labels(labels, trace.probs.shape[0], trace.probs.shape[1])
    picked = np.maximum(trace.probs[np.arange(y.size), y], 1e-300)
    return float(np.mean(-np.log(picked)))


def _check_labels(labels, n: int, num_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.size != n:
        raise DimensionError(f"{y.size} labels for {n} rows")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise DomainError(f"labels must lie in [0, {num_classes})")
    return y


def backward(params: ModelParams, trace: ForwardTrace, batch, labels) -> Gradients:
    """Analytic gradients of `loss_ce` for the trace's batch.

    Requires a train-mode trace produced from the same batch; running
    statistics receive no gradient.
    """
    x = np.asarray(batch, dtype=np.float64)
    if trace.mode != "train":
        raise ContractError("backward needs a train-mode trace")
    if trace.batch.shape != x.shape or not np.array_equal(trace.batch, x):
        raise ContractError("trace does not correspond to this batch")
    y = _check_labels(labels, x.shape[0], params.config.num_classes)
    n = x.shape[0]

    # d loss / d tempered logits
    d_tempered = trace.probs.copy()
    d_tempered[np.arange(n), y] -= 1.0
    d_tempered /= n

    temperature = trace.temperature
    d_raw = d_tempered / temperature[:, None]
    d_temp = -(d_tempered * trace.raw_logits).sum(axis=1) / temperature**2

    # temperature branch: sigmoid (flat where the floor is active), then BN
    sig = trace.temp_sigmoid
    d_y = d_temp * np.where(sig >= TEMPERATURE_FLOOR, sig * (1.0 - sig), 0.0)
    d_gamma = float((d_y * trace.temp_normed).sum())
    d_beta = float(d_y.sum())
    inv_std = 1.0 / np.sqrt(trace.bn_var + params.bn_eps)
    d_normed = d_y * params.bn_gamma
    d_s = inv_std * (d_normed - d_normed.mean() - trace.temp_normed * (d_normed * trace.temp_normed).mean())

    features = trace.penultimate
    d_temp_weight = features.T @ d_s
    d_temp_bias = float(d_s.sum())
    d_features = np.outer(d_s, params.temp_weight)

    # head
    if params.config.head_kind == "inner_product":
        d_head_weight = d_raw.T @ features
        d_head_bias = d_raw.sum(axis=0)
        d_features += d_raw @ params.head_weight
    else:
        fn, f_norms = _normalize_rows(features)
        wn, w_norms = _normalize_rows(params.head_weight)
        g = trace.raw_logits
        row_dot = (d_raw * g).sum(axis=1)
        safe_f = np.where(f_norms > 0.0, f_norms, 1.0)
        d_features += np.where(
            (f_norms > 0.0)[:, None], (d_raw @ wn - row_dot[:, None] * fn) / safe_f[:, None], 0.0
        )
        col_dot = (d_raw * g).sum(axis=0)
        safe_w = np.where(w_norms > 0.0, w_norms, 1.0)
        d_head_weight = np.where(
            (w_norms > 0.0)[:, None], (d_raw.T @ fn - col_dot[:, None] * wn) / safe_w[:, None], 0.0
        )
        d_head_bias = None

    # hidden stack
    d_weights = [np.empty(0)] * len(params.weights)
    d_biases = [np.empty(0)] * len(params.biases)
    grad = d_features
    for k in reversed(range(len(params.weights))):
        dz = grad * (trace.pre_activations[k] > 0.0)
        below = trace.activations[k - 1] if k > 0 else x
        d_weights[k] = below.T @ dz
        d_biases[k] = dz.sum(axis=0)
        grad = dz @ params.weights[k].T

    return Gradients(
        weights=d_weights,
        biases=d_biases,
        head_weight=d_head_weight,
        head_bias=d_head_bias,
        temp_weight=d_temp_weight,
        temp_bias=d_temp_bias,
        bn_gamma=d_gamma,
        bn_beta=d_beta,
    )


def input_gradient(params: ModelParams, x, target: int | None = None) -> np.ndarray:
    """Gradient of -log p_target w.r.t. a single input row (eval mode).

    `target` defaults to the predicted class. Batch norm reads the running
    statistics, so the result matches finite differences of the eval forward.
    """
    row = np.asarray(x, dtype=np.float64).reshape(1, -1)
    trace = forward(params, row, mode="eval")
    if target is None:
        target = int(np.argmax(trace.probs[0]))
    elif not 0 <= target < params.config.num_classes:
        raise DomainError(f"target class {target} out of range")

    d_tempered = trace.probs.copy()
    d_tempered[0, target] -= 1.0
    temperature = trace.temperature
    d_raw = d_tempered / temperature[:, None]
    d_temp = -(d_tempered * trace.raw_logits).sum(axis=1) / temperature**2

    sig = trace.temp_sigmoid
    d_y = d_temp * np.where(sig >= TEMPERATURE_FLOOR, sig * (1.0 - sig), 0.0)
    inv_std = 1.0 / np.sqrt(trace.bn_var + params.bn_eps)
    d_s = d_y * params.bn_gamma * inv_std  # eval mode: statistics are constants

    features = trace.penultimate
    d_features = np.outer(d_s, params.temp_weight)
    if params.config.head_kind == "inner_product":
        d_features += d_raw @ params.head_weight
    else:
        fn, f_norms = _normalize_rows(features)
        wn, _ = _normalize_rows(params.head_weight)
        row_dot = (d_raw * trace.raw_logits).sum(axis=1)
        safe_f = np.where(f_norms > 0.0, f_norms, 1.0)
        d_features += np.where(
            (f_norms > 0.0)[:, None], (d_raw @ wn - row_dot[:, None] * fn) / safe_f[:, None], 0.0
        )

    grad = d_features
    for k in reversed(range(len(params.weights))):
        dz = grad * (trace.pre_activations[k] > 0.0)
        grad = dz @ params.weights[k].T
    return grad.reshape(np.asarray(x, dtype=np.float64).shape)


def _trainable_arrays(params: ModelParams, grads: Gradients):
    pairs = list(zip(params.weights, grads.weights)) + list(zip(params.biases, grads.biases))
    pairs.append((params.head_weight, grads.head_weight))
    if params.head_bias is not None:
        pairs.append((params.head_bias, grads.head_bias))
    pairs.append((params.temp_weight, grads.temp_weight))
    return pairs


def train(params: ModelParams, ds, tc: TrainConfig, hooks=()) -> tuple[ModelParams, list[dict]]:
    """SGD with momentum over seeded shuffles; returns (params, epoch log).

    The learning rate is multiplied by `decay_factor` at the start of each
    milestone epoch (`int(fraction * epochs)`). An incomplete final batch is
    kept when it has >= 2 rows and dropped otherwise (train-mode batch norm
    needs batch statistics). Each epoch logs the mean minibatch loss and the
    eval-mode accuracy on the training set; hooks may append entries.
    """
    if ds.features.shape[1] != params.config.input_dim:
        raise DimensionError(
            f"dataset dimension {ds.features.shape[1]} != model input {params.config.input_dim}"
        )
    rng = stream(tc.shuffle_seed, "shuffle")
    milestone_epochs = {int(f * tc.epochs) for f in tc.milestones}
    n = len(ds)
    lr = tc.learning_rate

    velocity_scalars = {"temp_bias": 0.0, "bn_gamma": 0.0, "bn_beta": 0.0}
    velocity_arrays: dict[int, np.ndarray] = {}
    log: list[dict] = []
    for epoch in range(tc.epochs):
        if epoch > 0 and epoch in milestone_epochs:
            lr *= tc.decay_factor
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, tc.batch_size):
            idx = perm[start:start + tc.batch_size]
            if idx.size < 2:
                continue
            xb, yb = ds.features[idx], ds.labels[idx]
            trace = forward(params, xb, mode="train")
            losses.append(loss_ce(trace, yb))
            grads = backward(params, trace, xb, yb)
            for i, (arr, grad) in enumerate(_trainable_arrays(params, grads)):
                vel = velocity_arrays.setdefault(i, np.zeros_like(arr))
                vel *= tc.momentum
                vel += grad
                arr -= lr * vel
            for name, grad in (("temp_bias", grads.temp_bias),
                               ("bn_gamma", grads.bn_gamma),
                               ("bn_beta", grads.bn_beta)):
                velocity_scalars[name] = tc.momentum * velocity_scalars[name] + grad
                setattr(params, name, getattr(params, name) - lr * velocity_scalars[name])
        eval_trace = forward(params, ds.features, mode="eval")
        accuracy = float(np.mean(np.argmax(eval_trace.probs, axis=1) == ds.labels))
        entry = {
            "epoch": epoch,
            "loss": float(np.mean(losses)) if losses else float("nan"),
            "learning_rate": lr,
            "train_accuracy": accuracy,
        }
        for hook in hooks:
            hook(epoch, params, entry)
        log.append(entry)
    return params, log


EXTRACT_ARRAYS = ("penultimate", "raw_logits", "temperature", "tempered_logits", "probs")


def extract(params: ModelParams, features) -> FeatureDump:
    """Eval-mode forward packaged as an FDUMP-ready FeatureDump."""
    trace = forward(params, features, mode="eval")
    return FeatureDump(arrays={
        "penultimate": trace.penultimate,
        "raw_logits": trace.raw_logits,
        "temperature": trace.temperature,
        "tempered_logits": trace.tempered_logits,
        "probs": trace.probs,
    })


def outputs_from_features(params: ModelParams, features, weight_mask: np.ndarray | None = None,
                          temperature_override: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Recompute head outputs from (possibly transformed) penultimate features.

    This is the recomputation step behind the post-hoc transforms: clipped or
    pruned features re-enter the same head and temperature code the forward
    pass uses. `temperature_override` freezes the temperature instead of
    recomputing it from the transformed features.
    """
    features = np.asarray(features, dtype=np.float64)
    raw = head_logits(params, features, weight_mask)
    if temperature_override is None:
        _, _, _, _, _, temperature = _temperature_path(params, features, "eval", False)
    else:
        temperature = np.asarray(temperature_override, dtype=np.float64).ravel()
        if temperature.shape[0] != features.shape[0]:
            raise DimensionError("temperature override length does not match features")
    tempered = raw / temperature[:, None]
    return {
        "penultimate": features,
        "raw_logits": raw,
        "temperature": temperature,
        "tempered_logits": tempered,
        "probs": softmax_rows(tempered),
    }


def count_parameters(cfg: ModelConfig, include_temperature: bool = True) -> int:
    """Stored parameter scalars; the temperature branch adds p + 1 + 4
    (its weights, bias, and the four batch-norm scalars, the running
    statistics counted as stored though not trainable)."""
    total = sum(fi * fo + fo for fi, fo in cfg.layer_dims)
    total += cfg.num_classes * cfg.penultimate_dim
    if cfg.head_kind == "inner_product":
        total += cfg.num_classes
    if include_temperature:
        total += cfg.penultimate_dim + 1 + 4
    return total


def _array_doc(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def _array_from_doc(doc, name: str, expect_shape: tuple[int, ...]) -> np.ndarray:
    if not isinstance(doc, dict) or "shape" not in doc or "data" not in doc:
        raise FormatError(f"checkpoint field {name!r} must carry shape and data")
    try:
        shape = tuple(int(d) for d in doc["shape"])
        data = np.asarray(doc["data"], dtype=np.float64).ravel()
    except (TypeError, ValueError) as exc:
        raise FormatError(f"checkpoint field {name!r} is malformed: {exc}") from exc
    if shape != expect_shape:
        raise FormatError(f"checkpoint field {name!r} has shape {shape}, expected {expect_shape}")
    if data.size != int(np.prod(shape)):
        raise FormatError(f"checkpoint field {name!r}: {data.size} values for shape {shape}")
    if data.size and not np.all(np.isfinite(data)):
        raise FormatError(f"checkpoint field {name!r} contains non-finite values")
    return data.reshape(shape)


def save_checkpoint(params: ModelParams, path) -> None:
    """Versioned JSON checkpoint with explicit shapes.

    Floats are emitted as shortest round-trip decimals, so loading
    reproduces eval-mode forward outputs exactly.
    """
    cfg = params.config
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "input_dim": cfg.input_dim,
            "hidden_sizes": list(cfg.hidden_sizes),
            "penultimate_dim": cfg.penultimate_dim,
            "num_classes": cfg.num_classes,
            "head_kind": cfg.head_kind,
            "seed": cfg.seed,
        },
        "params": {
            "weights": [_array_doc(w) for w in params.weights],
            "biases": [_array_doc(b) for b in params.biases],
            "head_weight": _array_doc(params.head_weight),
            "head_bias": None if params.head_bias is None else _array_doc(params.head_bias),
            "temp_weight": _array_doc(params.temp_weight),
            "temp_bias": params.temp_bias,
            "bn": {
                "gamma": params.bn_gamma,
                "beta": params.bn_beta,
                "running_mean": params.bn_running_mean,
                "running_var": params.bn_running_var,
                "eps": params.bn_eps,
                "momentum": params.bn_momentum,
            },
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def load_checkpoint(path) -> ModelParams:
    """Load and validate a checkpoint written by `save_checkpoint`."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    try:
        cfg_doc = doc["config"]
        cfg = ModelConfig(
            input_dim=int(cfg_doc["input_dim"]),
            hidden_sizes=tuple(int(h) for h in cfg_doc["hidden_sizes"]),
            penultimate_dim=int(cfg_doc["penultimate_dim"]),
            num_classes=int(cfg_doc["num_classes"]),
            head_kind=str(cfg_doc["head_kind"]),
            seed=int(cfg_doc["seed"]),
        )
        pdoc = doc["params"]
        bn = pdoc["bn"]
    except (KeyError, TypeError, ValueError, DomainError) as exc:
        raise FormatError(f"{path}: malformed checkpoint: {exc}") from exc
    dims = cfg.layer_dims
    if not isinstance(pdoc.get("weights"), list) or len(pdoc["weights"]) != len(dims):
        raise FormatError(f"{path}: expected {len(dims)} weight blocks")
    weights = [_array_from_doc(w, f"weights[{k}]", dims[k]) for k, w in enumerate(pdoc["weights"])]
    biases = [_array_from_doc(b, f"biases[{k}]", (dims[k][1],)) for k, b in enumerate(pdoc["biases"])]
    head_weight = _array_from_doc(pdoc["head_weight"], "head_weight", (cfg.num_classes, cfg.penultimate_dim))
    if cfg.head_kind == "inner_product":
        head_bias = _array_from_doc(pdoc["head_bias"], "head_bias", (cfg.num_classes,))
    else:
        if pdoc.get("head_bias") is not None:
            raise FormatError(f"{path}: cosine head must not carry a bias")
        head_bias = None
    temp_weight = _array_from_doc(pdoc["temp_weight"], "temp_weight", (cfg.penultimate_dim,))
    scalars = {}
    for name, value in (("temp_bias", pdoc.get("temp_bias")), ("gamma", bn.get("gamma")),
                        ("beta", bn.get("beta")), ("running_mean", bn.get("running_mean")),
                        ("running_var", bn.get("running_var")), ("eps", bn.get("eps")),
                        ("momentum", bn.get("momentum"))):
        try:
            scalars[name] = float(value)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: scalar field {name!r} is malformed") from exc
        if not np.isfinite(scalars[name]):
            raise FormatError(f"{path}: scalar field {name!r} is not finite")
    if scalars["running_var"] < 0 or scalars["eps"] <= 0:
        raise FormatError(f"{path}: running_var must be >= 0 and eps > 0")
    return ModelParams(
        config=cfg,
        weights=weights,
        biases=biases,
        head_weight=head_weight,
        head_bias=head_bias,
        temp_weight=temp_weight,
        temp_bias=scalars["temp_bias"],
        bn_gamma=scalars["gamma"],
        bn_beta=scalars["beta"],
        bn_running_mean=scalars["running_mean"],
        bn_running_var=scalars["running_var"],
        bn_eps=scalars["eps"],
        bn_momentum=scalars["momentum"],
    )


def clone_params(params: ModelParams) -> ModelParams:
    """Deep copy (used by finite-difference checks and the epoch hook)."""
    return ModelParams(
        config=params.config,
        weights=[w.copy() for w in params.weights],
        biases=[b.copy() for b in params.biases],
        head_weight=params.head_weight.copy(),
        head_bias=None if params.head_bias is None else params.head_bias.copy(),
        temp_weight=params.temp_weight.copy(),
        temp_bias=params.temp_bias,
        bn_gamma=params.bn_gamma,
        bn_beta=params.bn_beta,
        bn_running_mean=params.bn_running_mean,
        bn_running_var=params.bn_running_var,
        bn_eps=params.bn_eps,
        bn_momentum=params.bn_momentum,
    )
