"""Learned-temperature energy OOD scoring, baselines, and evaluation."""

__version__ = "0.1.0"

from .analysis import (
    ConfidenceInterval,
    misclassified_split_eval,
    ood_proximal_accuracy,
    score_confidence_interval,
)
from .datasets import LabeledDataset, SyntheticSpec, gen_synthetic, load_cifar10_bin, load_idx, split
from .fdump import FeatureDump, read_fdump, write_fdump
from .metrics import (
    HistogramPair,
    MetricsReport,
    ScoredSet,
    auprc_exact,
    auroc_exact,
    build_histograms,
    fpr_at_tpr,
    metrics_exact,
    metrics_from_histograms,
)
from .model import (
    ForwardTrace,
    ModelConfig,
    ModelParams,
    TrainConfig,
    backward,
    extract,
    forward,
    init_params,
    input_gradient,
    load_checkpoint,
    loss_ce,
    save_checkpoint,
    train,
)
from .scorers import (
    FittedState,
    PosthocConfig,
    abet,
    energy_learned,
    energy_scalar,
    entropy_norm,
    fit_scorers,
    max_logit,
    msp,
    score_batch,
    score_map,
    temp_score,
)

__all__ = [name for name in dir() if not name.startswith("_")]
