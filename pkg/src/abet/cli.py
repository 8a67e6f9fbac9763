"""Command-line pipeline: synth, train, extract, score, eval, analyze, report.

Every command reads the run configuration (--config), works under an output
directory (--out), and appends its section to <out>/run_report.json. Partial
artifacts are written to temporary names and renamed atomically. Exit codes:
0 success, 2 configuration/validation error, 3 I/O error, 4 numerical error.
"""

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import misclassified_split_eval, ood_proximal_accuracy, score_confidence_interval
from .config import RunConfig
from .datasets import LabeledDataset
from .errors import (
    AbetError,
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    FitError,
    FormatError,
    NumericalError,
)
from .fdump import FeatureDump, read_fdump, write_fdump
from .metrics import (
    ScoredSet,
    analytic_bounds,
    auroc_exact,
    build_histograms,
    metrics_exact,
    metrics_from_histograms,
)
from .model import (
    count_parameters,
    extract,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .scorers import fit_scorers, score_batch

REPORT_SCHEMA_VERSION = 1
METRICS_SCHEMA_VERSION = 1
ANALYSIS_SCHEMA_VERSION = 1


# -- atomic artifact helpers --------------------------------------------------


def _atomic(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _write_json(path: Path, doc) -> None:
    _atomic(path, lambda p: p.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n"))


def _write_fdump(path: Path, dump: FeatureDump) -> None:
    _atomic(path, lambda p: write_fdump(dump, p))


def write_scores_csv(path: Path, scores) -> None:
    def writer(p: Path):
        with open(p, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["index", "score"])
            for i, v in enumerate(np.asarray(scores, dtype=np.float64)):
                out.writerow([i, repr(float(v))])

    _atomic(path, writer)


def read_scores_csv(path) -> np.ndarray:
    with open(path, "r", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["index", "score"]:
        raise FormatError(f"{path}: expected an 'index,score' header")
    try:
        return np.array([float(r[1]) for r in rows[1:]], dtype=np.float64)
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed score row: {exc}") from exc


def update_run_report(out_dir: Path, section: str, payload, config: RunConfig,
                      elapsed: float | None = None) -> None:
    path = out_dir / "run_report.json"
    doc = {"schema_version": REPORT_SCHEMA_VERSION, "stages": {}, "timing_seconds": {}}
    if path.exists():
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError:
            pass  # a torn report is rebuilt rather than fatal
    doc["schema_version"] = REPORT_SCHEMA_VERSION
    doc["config"] = config.effective()
    doc["output_dir"] = str(out_dir)
    doc.setdefault("stages", {})[section] = payload
    if elapsed is not None:
        doc.setdefault("timing_seconds", {})[section] = elapsed
    _write_json(path, doc)


def normalize_run_report(doc: dict) -> dict:
    """Strip the fields two identical runs may legitimately differ in."""
    out = json.loads(json.dumps(doc))
    out.pop("timing_seconds", None)
    out.pop("output_dir", None)
    return out


# -- dataset plumbing ----------------------------------------------------------


def _dataset_dump(ds) -> FeatureDump:
    return FeatureDump(arrays={"features": ds.features}, labels=ds.labels)


def _load_dataset_dump(path: Path):
    dump = read_fdump(path)
    (features,) = dump.require("features")
    if dump.labels is None:
        raise FormatError(f"{path}: dataset dump is missing labels")
    return features, dump.labels.astype(np.int64)


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise FormatError(f"{path} not found ({hint})")
    return path


def make_epoch_ood_hook(id_eval_features, id_eval_labels, ood_features):
    """Per-epoch hook: records eval accuracy's companion, the OOD AUROC of
    the score computed from the current parameters."""

    def hook(epoch, params, entry):
        id_out = extract(params, id_eval_features).arrays
        ood_out = extract(params, ood_features).arrays
        s = ScoredSet(score_batch("abet", id_out), score_batch("abet", ood_out))
        entry["ood_auroc"] = auroc_exact(s)

    return hook


# -- commands ------------------------------------------------------------------


def cmd_synth(config: RunConfig, out_dir: Path, args) -> int:
    t0 = time.perf_counter()
    data_dir = out_dir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    datasets = config.resolve_datasets()
    if not datasets:
        raise ConfigError("no datasets configured")
    written = {}
    for name, ds in datasets.items():
        path = data_dir / f"{name}.fdump"
        _write_fdump(path, _dataset_dump(ds))
        written[name] = {"rows": len(ds), "dim": int(ds.features.shape[1]),
                         "classes": ds.num_classes, "path": f"data/{name}.fdump"}
    update_run_report(out_dir, "synth", written, config, time.perf_counter() - t0)
    for name, info in written.items():
        print(f"synth: {name}: {info['rows']} x {info['dim']} ({info['classes']} classes)")
    return 0


def cmd_train(config: RunConfig, out_dir: Path, args) -> int:
    t0 = time.perf_counter()
    train_path = _require(out_dir / "data" / "id_train.fdump", "run `abet synth` first")
    features, labels = _load_dataset_dump(train_path)
    ds = LabeledDataset(features, labels, config.model.num_classes)
    params = init_params(config.model)

    hooks = []
    hook_active = False
    test_path = out_dir / "data" / "id_test.fdump"
    ood_path = out_dir / "data" / "ood.fdump"
    if config.epoch_ood_hook and test_path.exists() and ood_path.exists():
        id_eval, id_eval_labels = _load_dataset_dump(test_path)
        ood_eval, _ = _load_dataset_dump(ood_path)
        hooks.append(make_epoch_ood_hook(id_eval, id_eval_labels, ood_eval))
        hook_active = True

    params, log = train(params, ds, config.train, hooks=hooks)
    _atomic(out_dir / "checkpoint.json", lambda p: save_checkpoint(params, p))

    columns = ["epoch", "loss", "learning_rate", "train_accuracy"]
    if hook_active:
        columns.append("ood_auroc")

    def write_log(p: Path):
        with open(p, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for entry in log:
                writer.writerow([repr(entry[c]) if isinstance(entry[c], float) else entry[c]
                                 for c in columns])

    _atomic(out_dir / "epoch_log.csv", write_log)

    payload = {
        "epochs": config.train.epochs,
        "final_train_accuracy": log[-1]["train_accuracy"],
        "parameter_counts": {
            "with_temperature": count_parameters(config.model, include_temperature=True),
            "baseline": count_parameters(config.model, include_temperature=False),
            "temperature_overhead": config.model.penultimate_dim + 1 + 4,
        },
        "epoch_log": log,
        "checkpoint": "checkpoint.json",
    }
    update_run_report(out_dir, "train", payload, config, time.perf_counter() - t0)
    print(f"train: {config.train.epochs} epochs, final train accuracy "
          f"{log[-1]['train_accuracy']:.4f}, checkpoint.json written")
    return 0


def _load_params(config: RunConfig, out_dir: Path, args):
    ckpt = Path(args.checkpoint) if getattr(args, "checkpoint", None) else out_dir / "checkpoint.json"
    _require(ckpt, "run `abet train` first or pass --checkpoint")
    return load_checkpoint(ckpt)


def cmd_extract(config: RunConfig, out_dir: Path, args) -> int:
    t0 = time.perf_counter()
    params = _load_params(config, out_dir, args)
    jobs = []
    if args.data:
        name = args.name or Path(args.data).stem
        feats, labs = _load_dataset_dump(_require(Path(args.data), "feature dump"))
        jobs.append((name, feats, labs))
    else:
        splits = ("id_train", "id_test", "ood") if args.split == "all" else (args.split,)
        for split_name in splits:
            path = out_dir / "data" / f"{split_name}.fdump"
            if args.split == "all" and not path.exists():
                continue
            feats, labs = _load_dataset_dump(_require(path, "run `abet synth` first"))
            jobs.append((split_name, feats, labs))
    if not jobs:
        raise ConfigError("nothing to extract; run `abet synth` or pass --data")
    written = {}
    for name, feats, labs in jobs:
        dump = extract(params, feats)
        dump.labels = labs
        path = out_dir / f"features_{name}.fdump"
        _write_fdump(path, dump)
        written[name] = f"features_{name}.fdump"
    update_run_report(out_dir, "extract", written, config, time.perf_counter() - t0)
    for name, path in written.items():
        print(f"extract: {name} -> {path}")
    return 0


def _fitted_state(config: RunConfig, out_dir: Path, params):
    """Fit whatever the configured scorers/transforms need from the ID train dump."""
    names = {e["name"] for e in config.scorer_entries}
    transforms = {e["transform"] for e in config.scorer_entries if e["transform"]}
    if not names & {"mahalanobis", "knn", "sml"} and not transforms & {"react", "dice"}:
        return fit_scorers({}, cfg=config.posthoc)
    path = _require(out_dir / "features_id_train.fdump",
                    "fitted scorers need `abet extract --split id_train`")
    dump = read_fdump(path)
    labels = None if dump.labels is None else dump.labels.astype(np.int64)
    return fit_scorers(
        dump.arrays, cfg=config.posthoc, labels=labels,
        scorers=tuple(names), transforms=tuple(transforms),
        head_kind=params.config.head_kind, head_weight=params.head_weight,
        head_bias=params.head_bias,
    )


def cmd_score(config: RunConfig, out_dir: Path, args) -> int:
    t0 = time.perf_counter()
    params = _load_params(config, out_dir, args)
    fitted = _fitted_state(config, out_dir, params)
    scores_dir = out_dir / "scores"
    scores_dir.mkdir(parents=True, exist_ok=True)

    if args.dump:
        name = args.name or Path(args.dump).stem
        sets = [(name, Path(args.dump))]
    else:
        sets = []
        for tag, fname in (("id", "features_id_test.fdump"), ("ood", "features_ood.fdump")):
            if args.split in ("all", tag):
                sets.append((tag, _require(out_dir / fname, "run `abet extract` first")))

    needs_inputs = any(e["transform"] == "odin" for e in config.scorer_entries)
    payload = {}
    for tag, dump_path in sets:
        dump = read_fdump(dump_path)
        inputs = None
        if needs_inputs:
            src = out_dir / "data" / (f"{'id_test' if tag == 'id' else tag}.fdump")
            inputs, _ = _load_dataset_dump(_require(src, "odin needs the raw inputs"))
        combined = FeatureDump()
        for entry in config.scorer_entries:
            label = config.scorer_label(entry)
            values = score_batch(
                entry["name"], dump, fitted=fitted, cfg=config.posthoc, params=params,
                transform=entry["transform"], freeze_temperature=entry["freeze_temperature"],
                inputs=inputs,
            )
            write_scores_csv(scores_dir / f"{label}_{tag}.csv", values)
            combined.arrays[f"scores_{label}"] = values
            payload.setdefault(label, {})[tag] = f"scores/{label}_{tag}.csv"
        _write_fdump(scores_dir / f"{tag}.fdump", combined)
    update_run_report(out_dir, "score", payload, config, time.perf_counter() - t0)
    for label, tags in payload.items():
        print(f"score: {label}: {', '.join(tags.values())}")
    return 0


def _metric_doc(id_scores, ood_scores, config: RunConfig, scorer_name: str | None) -> dict:
    s = ScoredSet(id_scores, ood_scores)
    bounds = analytic_bounds(scorer_name, config.model.num_classes) if scorer_name else None
    exact = metrics_exact(s, tpr_target=config.eval["tpr_target"],
                          auprc_positive=config.eval["auprc_positive"])
    hist = metrics_from_histograms(
        build_histograms(s, bin_count=config.eval["bin_count"], bounds=bounds),
        tpr_target=config.eval["tpr_target"], auprc_positive=config.eval["auprc_positive"],
    )
    return {
        "schema_version": METRICS_SCHEMA_VERSION,
        "scorer": scorer_name,
        "exact": exact.to_dict(),
        "histogram": hist.to_dict(),
    }


def cmd_eval(config: RunConfig, out_dir: Path, args) -> int:
    t0 = time.perf_counter()
    payload = {}
    if args.id_scores or args.ood_scores:
        if not (args.id_scores and args.ood_scores):
            raise ConfigError("--id-scores and --ood-scores must be given together")
        name = args.name or "custom"
        doc = _metric_doc(read_scores_csv(args.id_scores), read_scores_csv(args.ood_scores),
                          config, None)
        _write_json(out_dir / f"metrics_{name}.json", doc)
        payload[name] = doc
    else:
        for entry in config.scorer_entries:
            label = config.scorer_label(entry)
            id_path = _require(out_dir / "scores" / f"{label}_id.csv", "run `abet score` first")
            ood_path = _require(out_dir / "scores" / f"{label}_ood.csv", "run `abet score` first")
            doc = _metric_doc(read_scores_csv(id_path), read_scores_csv(ood_path),
                              config, entry["name"])
            _write_json(out_dir / f"metrics_{label}.json", doc)
            payload[label] = doc
    update_run_report(out_dir, "eval", payload, config, time.perf_counter() - t0)
    for label, doc in payload.items():
        e = doc["exact"]
        print(f"eval: {label}: auroc {e['auroc']:.4f} auprc {e['auprc']:.4f} "
              f"fpr@95tpr {e['fpr_at_95tpr']:.4f}")
    return 0


def cmd_analyze(config: RunConfig, out_dir: Path, args) -> int:
    t0 = time.perf_counter()
    id_dump = read_fdump(_require(out_dir / "features_id_test.fdump", "run `abet extract` first"))
    ood_dump = read_fdump(_require(out_dir / "features_ood.fdump", "run `abet extract` first"))
    if id_dump.labels is None:
        raise FormatError("features_id_test.fdump is missing labels")
    labels = id_dump.labels.astype(np.int64)
    predictions = np.argmax(id_dump.arrays["probs"], axis=1)
    correct = predictions == labels

    id_scores, ood_scores = {}, {}
    for entry in config.scorer_entries:
        label = config.scorer_label(entry)
        id_path = out_dir / "scores" / f"{label}_id.csv"
        ood_path = out_dir / "scores" / f"{label}_ood.csv"
        if id_path.exists() and ood_path.exists():
            id_scores[label] = read_scores_csv(id_path)
            ood_scores[label] = read_scores_csv(ood_path)
    if not id_scores:
        raise ConfigError("no score files found; run `abet score` first")

    breakdown = misclassified_split_eval(id_scores, correct, ood_scores,
                                         tpr_target=config.eval["tpr_target"])
    proximal, overall = ood_proximal_accuracy(
        id_dump.arrays["penultimate"], correct, ood_dump.arrays["penultimate"])

    intervals = {}
    for label, values in id_scores.items():
        entry = {"correct": None, "misclassified": None, "disjoint": None}
        ci_correct = ci_mis = None
        if correct.sum() >= 2:
            ci_correct = score_confidence_interval(values[correct])
            entry["correct"] = ci_correct.to_dict()
        if (~correct).sum() >= 2:
            ci_mis = score_confidence_interval(values[~correct])
            entry["misclassified"] = ci_mis.to_dict()
        if ci_correct is not None and ci_mis is not None:
            entry["disjoint"] = ci_correct.disjoint_from(ci_mis)
        intervals[label] = entry

    doc = {
        "schema_version": ANALYSIS_SCHEMA_VERSION,
        "misclassified_breakdown": breakdown,
        "ood_proximal_accuracy": proximal,
        "overall_accuracy": overall,
        "confidence_intervals": intervals,
        "confidence_method": "normal approximation, sample std (n-1)",
    }
    _write_json(out_dir / "analysis.json", doc)
    update_run_report(out_dir, "analyze", doc, config, time.perf_counter() - t0)
    print(f"analyze: proximal accuracy {proximal:.4f} vs overall {overall:.4f}; "
          f"{breakdown['n_misclassified']} misclassified")
    return 0


def cmd_report(config: RunConfig, out_dir: Path, args) -> int:
    from .report import render_report

    t0 = time.perf_counter()
    jobs = []
    if args.id_scores or args.ood_scores:
        if not (args.id_scores and args.ood_scores):
            raise ConfigError("--id-scores and --ood-scores must be given together")
        name = args.name or "custom"
        jobs.append((name, read_scores_csv(args.id_scores), read_scores_csv(args.ood_scores), None))
    else:
        for entry in config.scorer_entries:
            label = config.scorer_label(entry)
            if args.scorer and label != args.scorer:
                continue
            id_path = _require(out_dir / "scores" / f"{label}_id.csv", "run `abet score` first")
            ood_path = _require(out_dir / "scores" / f"{label}_ood.csv", "run `abet score` first")
            bounds = analytic_bounds(entry["name"], config.model.num_classes)
            jobs.append((label, read_scores_csv(id_path), read_scores_csv(ood_path), bounds))
    if not jobs:
        raise ConfigError("nothing to report")
    payload = {}
    for label, id_scores, ood_scores, bounds in jobs:
        svg = out_dir / f"report_{label}.svg"
        bins = out_dir / f"report_{label}_bins.csv"
        auroc = render_report(id_scores, ood_scores, svg, bins, title=label, bounds=bounds)
        payload[label] = {"svg": svg.name, "bins_csv": bins.name, "auroc": auroc}
        print(f"report: {label}: AUROC {auroc:.4f} -> {svg.name}")
    update_run_report(out_dir, "report", payload, config, time.perf_counter() - t0)
    return 0


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abet",
        description="Learned-temperature energy OOD scoring: desk-scale trainer, "
                    "post-hoc scorers, and evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"abet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="run configuration JSON")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="materialize the configured datasets")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the classifier; writes checkpoint + epoch log")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="run the model over a dataset; writes feature dumps")
    common(p)
    p.add_argument("--split", choices=("all", "id_train", "id_test", "ood"), default="all")
    p.add_argument("--checkpoint", help="checkpoint path (default <out>/checkpoint.json)")
    p.add_argument("--data", help="score an explicit dataset dump instead of a configured split")
    p.add_argument("--name", help="artifact name for --data")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("score", help="apply the configured scorers; writes CSV + FDUMP")
    common(p)
    p.add_argument("--split", choices=("all", "id", "ood"), default="all")
    p.add_argument("--checkpoint", help="checkpoint path (default <out>/checkpoint.json)")
    p.add_argument("--dump", help="score an explicit extract dump instead")
    p.add_argument("--name", help="artifact name for --dump")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="exact + histogram metrics; writes metrics JSON")
    common(p, config_required=False)
    p.add_argument("--id-scores", help="CSV of ID scores (with --ood-scores)")
    p.add_argument("--ood-scores", help="CSV of OOD scores")
    p.add_argument("--name", help="artifact name for explicit score files")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="misclassified/proximal analyses; writes analysis.json")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="histogram figure (SVG) + bin CSV per scorer")
    common(p, config_required=False)
    p.add_argument("--scorer", help="restrict to one scorer label")
    p.add_argument("--id-scores", help="CSV of ID scores (with --ood-scores)")
    p.add_argument("--ood-scores", help="CSV of OOD scores")
    p.add_argument("--name", help="artifact name for explicit score files")
    p.set_defaults(func=cmd_report)
    return parser


_ERROR_KINDS = (
    ((ConfigError, DomainError, DimensionError, ContractError, FitError), "config", 2),
    ((FormatError,), "io", 3),
    ((NumericalError,), "numerical", 4),
    ((OSError,), "io", 3),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.config:
            config = RunConfig.load(args.config, seed_override=args.seed)
        else:
            config = RunConfig({}, seed_override=args.seed)
        return args.func(config, out_dir, args)
    except AbetError as exc:
        for classes, kind, code in _ERROR_KINDS:
            if isinstance(exc, classes):
                print(f"abet: error: {kind}: {str(exc) or exc.__class__.__name__}".replace("\n", " "),
                      file=sys.stderr)
                return code
        print(f"abet: error: internal: {exc}".replace("\n", " "), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"abet: error: io: {exc}".replace("\n", " "), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
