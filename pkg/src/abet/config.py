"""Run configuration: one JSON document drives the whole pipeline.

Unknown keys are rejected (typos should fail loudly), defaults are filled in,
and the effective configuration is echoed into the run report for
provenance. Dataset sources are either synthetic recipes or file paths:

    {"kind": "synthetic", "synthetic": {"kind": "blobs", "dim": 8, ...}}
    {"kind": "fdump", "path": "features.fdump"}
    {"kind": "idx", "images": "train-images-idx3-ubyte", "labels": "..."}
    {"kind": "cifar", "paths": ["data_batch_1.bin", ...]}

The ID data comes either as separate "id_train"/"id_test" sources or as one
"id" source with an "id_split" fraction (seeded split).
"""

import json
from dataclasses import asdict

from .datasets import LabeledDataset, SyntheticSpec, gen_synthetic, load_cifar10_bin, load_idx, split
from .errors import ConfigError, FormatError
from .fdump import read_fdump
from .model import ModelConfig, TrainConfig
from .scorers import SCORERS, TRANSFORMS, PosthocConfig
from .seeds import derive_seed

MODEL_DEFAULTS = {
    "input_dim": 8, "hidden_sizes": [32], "penultimate_dim": 16,
    "num_classes": 4, "head_kind": "cosine",
}
TRAIN_DEFAULTS = {
    "epochs": 60, "batch_size": 64, "learning_rate": 0.05, "momentum": 0.9,
    "milestones": [0.5, 0.75, 0.9], "decay_factor": 0.1, "epoch_ood_hook": True,
}
EVAL_DEFAULTS = {"bin_count": 100, "auprc_positive": "id", "tpr_target": 0.95}
POSTHOC_DEFAULTS = {
    "react_percentile": 90.0, "dice_keep_fraction": 0.10, "ash_prune_percentile": 90.0,
    "odin_epsilon": 0.0, "knn_k": 50, "knn_normalize": True, "scalar_temperature": 1.0,
    "mahalanobis_ridge": 1e-6,
}
SOURCE_KINDS = ("synthetic", "fdump", "idx", "cifar")


def _merge(defaults: dict, given, where: str) -> dict:
    if given is None:
        return dict(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    out = dict(defaults)
    out.update(given)
    return out


def _check_source(doc, where: str) -> dict:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError(f"{where} must be an object with a 'kind'")
    kind = doc["kind"]
    if kind not in SOURCE_KINDS:
        raise ConfigError(f"{where}.kind must be one of {', '.join(SOURCE_KINDS)}, got {kind!r}")
    required = {
        "synthetic": {"synthetic"}, "fdump": {"path"},
        "idx": {"images", "labels"}, "cifar": {"paths"},
    }[kind]
    allowed = required | {"kind"}
    missing = required - set(doc)
    if missing:
        raise ConfigError(f"{where} ({kind}) is missing: {', '.join(sorted(missing))}")
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    return doc


class RunConfig:
    """Validated configuration with its effective (defaults-filled) document."""

    def __init__(self, doc: dict, seed_override: int | None = None):
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        known_top = {"seed", "out", "model", "train", "datasets", "scorers", "posthoc", "eval"}
        unknown = set(doc) - known_top
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")

        self.seed = int(seed_override if seed_override is not None else doc.get("seed", 0))
        self.out = doc.get("out")

        model_doc = _merge(MODEL_DEFAULTS, doc.get("model"), "model")
        try:
            self.model = ModelConfig(
                input_dim=int(model_doc["input_dim"]),
                hidden_sizes=tuple(int(h) for h in model_doc["hidden_sizes"]),
                penultimate_dim=int(model_doc["penultimate_dim"]),
                num_classes=int(model_doc["num_classes"]),
                head_kind=str(model_doc["head_kind"]),
                seed=derive_seed(self.seed, "model-init"),
            )
            train_doc = _merge(TRAIN_DEFAULTS, doc.get("train"), "train")
            self.epoch_ood_hook = bool(train_doc.pop("epoch_ood_hook"))
            self.train = TrainConfig(
                epochs=int(train_doc["epochs"]),
                batch_size=int(train_doc["batch_size"]),
                learning_rate=float(train_doc["learning_rate"]),
                momentum=float(train_doc["momentum"]),
                milestones=tuple(float(m) for m in train_doc["milestones"]),
                decay_factor=float(train_doc["decay_factor"]),
                shuffle_seed=derive_seed(self.seed, "shuffle"),
            )
            posthoc_doc = _merge(POSTHOC_DEFAULTS, doc.get("posthoc"), "posthoc")
            self.posthoc = PosthocConfig(**posthoc_doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

        self.eval = _merge(EVAL_DEFAULTS, doc.get("eval"), "eval")
        if self.eval["auprc_positive"] not in ("id", "ood"):
            raise ConfigError("eval.auprc_positive must be 'id' or 'ood'")

        datasets = doc.get("datasets") or {}
        if not isinstance(datasets, dict):
            raise ConfigError("datasets must be an object")
        known_ds = {"id", "id_split", "id_train", "id_test", "ood"}
        unknown = set(datasets) - known_ds
        if unknown:
            raise ConfigError(f"unknown key(s) in datasets: {', '.join(sorted(unknown))}")
        if "id" in datasets and ("id_train" in datasets or "id_test" in datasets):
            raise ConfigError("give either datasets.id (+ id_split) or id_train/id_test, not both")
        self.datasets = datasets
        self.id_split = float(datasets.get("id_split", 2 / 3))
        for name in ("id", "id_train", "id_test", "ood"):
            if name in datasets:
                _check_source(datasets[name], f"datasets.{name}")

        self.scorer_entries = []
        for i, entry in enumerate(doc.get("scorers") or [{"name": "abet"}]):
            if not isinstance(entry, dict) or "name" not in entry:
                raise ConfigError(f"scorers[{i}] must be an object with a 'name'")
            unknown = set(entry) - {"name", "transform", "freeze_temperature"}
            if unknown:
                raise ConfigError(f"unknown key(s) in scorers[{i}]: {', '.join(sorted(unknown))}")
            name = entry["name"]
            transform = entry.get("transform")
            if name not in SCORERS:
                raise ConfigError(f"scorers[{i}].name {name!r} unknown; known: {', '.join(SCORERS)}")
            if transform is not None and transform not in TRANSFORMS:
                raise ConfigError(
                    f"scorers[{i}].transform {transform!r} unknown; known: {', '.join(TRANSFORMS)}")
            self.scorer_entries.append({
                "name": name,
                "transform": transform,
                "freeze_temperature": bool(entry.get("freeze_temperature", False)),
            })

    @staticmethod
    def load(path, seed_override: int | None = None) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        return RunConfig(doc, seed_override)

    def effective(self) -> dict:
        """The defaults-filled document echoed into the run report."""
        cfg = self.model
        return {
            "seed": self.seed,
            "model": {
                "input_dim": cfg.input_dim, "hidden_sizes": list(cfg.hidden_sizes),
                "penultimate_dim": cfg.penultimate_dim, "num_classes": cfg.num_classes,
                "head_kind": cfg.head_kind,
            },
            "train": {
                "epochs": self.train.epochs, "batch_size": self.train.batch_size,
                "learning_rate": self.train.learning_rate, "momentum": self.train.momentum,
                "milestones": list(self.train.milestones), "decay_factor": self.train.decay_factor,
                "epoch_ood_hook": self.epoch_ood_hook,
            },
            "datasets": self.datasets,
            "id_split": self.id_split,
            "scorers": self.scorer_entries,
            "posthoc": asdict(self.posthoc),
            "eval": dict(self.eval),
        }

    def scorer_label(self, entry: dict) -> str:
        if entry["transform"]:
            return f"{entry['name']}_{entry['transform']}"
        return entry["name"]

    def _load_source(self, name: str) -> LabeledDataset:
        source = self.datasets[name]
        kind = source["kind"]
        if kind == "synthetic":
            sdoc = dict(source["synthetic"])
            unknown = set(sdoc) - {"kind", "dim", "classes", "separation", "noise", "count", "seed"}
            if unknown:
                raise ConfigError(f"unknown key(s) in datasets.{name}.synthetic: {', '.join(sorted(unknown))}")
            try:
                spec = SyntheticSpec(
                    kind=sdoc["kind"],
                    dim=int(sdoc["dim"]),
                    num_classes=int(sdoc.get("classes", 1)),
                    separation=float(sdoc["separation"]),
                    noise=float(sdoc["noise"]),
                    count=int(sdoc["count"]),
                    seed=int(sdoc.get("seed", derive_seed(self.seed, f"synth:{name}"))),
                )
            except KeyError as exc:
                raise ConfigError(f"datasets.{name}.synthetic is missing {exc}") from exc
            return gen_synthetic(spec)
        if kind == "fdump":
            dump = read_fdump(source["path"])
            (features,) = dump.require("features")
            if dump.labels is None:
                raise FormatError(f"{source['path']}: dataset dump needs labels")
            labels = dump.labels.astype("int64")
            return LabeledDataset(features, labels, int(labels.max()) + 1)
        if kind == "idx":
            return load_idx(source["images"], source["labels"])
        return load_cifar10_bin(source["paths"])

    def resolve_datasets(self) -> dict[str, LabeledDataset]:
        """Materialize id_train / id_test / ood per the configured sources."""
        out: dict[str, LabeledDataset] = {}
        if "id" in self.datasets:
            full = self._load_source("id")
            out["id_train"], out["id_test"] = split(
                full, self.id_split, derive_seed(self.seed, "id-split"))
        else:
            for name in ("id_train", "id_test"):
                if name in self.datasets:
                    out[name] = self._load_source(name)
        if "ood" in self.datasets:
            out["ood"] = self._load_source("ood")
        return out
