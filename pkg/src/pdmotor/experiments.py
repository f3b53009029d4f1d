"""Experiment orchestration: baselines, ensembles, reports.

Every experiment is a JSON-serializable ExperimentConfig. Runs are
seed-deterministic and resumable: each trained member is cached as a
weight file keyed by a hash of everything that determines it (data
source, network config, member seed, training-set identity), so a killed
run picks up where it stopped and reproduces byte-identical reports.

Report bundle written to the output directory:

    config.json                 resolved configuration
    per_patient.csv             accuracy per patient + All (wide)
    per_fold.csv                kfold only: accuracy per fold + Avg
    member_predictions.csv      patient,minute,true,model_id,logit_off,logit_on,logit_dys
    aggregated_predictions.csv  patient,minute,true,pred,agreement,logit_*,smoothed_pred,confidence_rank
    smoothing_sweep.csv         accuracy per kernel width (wide)
    confidence_by_patient.csv   windows/top-confidence counts per patient + All
    confidence_bands.csv        accuracy per 20% confidence band per mode
    interpolation.csv           interpolated-day accuracy for well-covered patients
    summary.json                headline numbers for programmatic use
"""

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import aggregation as agg
from . import network, persist
from .aggregation import EnsemblePrediction, SmoothingKernel
from .dataset import (
    PatientRecord,
    eligible_models,
    kfold_windows,
    loso_folds,
    sample_patient_subsets,
)
from .errors import PdmotorError
from .network import NetConfig
from .preprocess import (
    NoMotionPolicy,
    filter_no_motion,
    read_labels_csv,
    read_stream_csv,
    resample,
    windowize,
)
from .states import UNLABELED, state_name
from .synth import generate_corpus, make_profiles

EXPERIMENT_KINDS = (
    "cnn_single",
    "cnn_loso",
    "kfold10",
    "esb_dropout",
    "esb_diffinit",
    "esb_diffpat",
)


@dataclass
class ExperimentConfig:
    kind: str = "esb_diffpat"
    data: dict = field(
        default_factory=lambda: {
            "source": "synthetic",
            "patients": 10,
            "minutes": 60,
            "seed": 1,
        }
    )
    net: dict = field(
        default_factory=lambda: {"width_scale": 32, "epochs": 10, "batch_size": 32, "lr": 0.001}
    )
    n_members: int = 100
    subset_size: int = 15
    aggregation: str = agg.LOGIT_SUM
    smoothing_kernels: tuple = (0, 5, 11, 31, 61, 181, "inf")
    dump_kernel: int = 11
    confidence_fraction: float = 0.2
    min_top_share: float = 0.3
    gap_limit: int = 10
    drop_fraction: float = 0.3
    kfold_k: int = 10
    retrain_per_fold: bool = False
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise PdmotorError(f"unknown experiment kind {self.kind!r}")

    def net_config(self, seed: int) -> NetConfig:
        return NetConfig(seed=seed, **self.net)

    def to_json(self) -> str:
        d = asdict(self)
        d["smoothing_kernels"] = list(self.smoothing_kernels)
        return json.dumps(d, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        d = json.loads(text)
        if "smoothing_kernels" in d:
            d["smoothing_kernels"] = tuple(d["smoothing_kernels"])
        return cls(**d)


def parse_kernel(k) -> SmoothingKernel:
    if isinstance(k, str):
        if k.lower() in ("inf", "inf.", "infinite"):
            return SmoothingKernel(math.inf)
        k = int(k)
    return SmoothingKernel(k)


# ---------------------------------------------------------------------------
# Data loading
# ---------------------------------------------------------------------------

def load_records(data_cfg: dict) -> tuple[list[PatientRecord], dict]:
    """Materialize the corpus and apply the no-motion filter.

    Returns (records of kept windows, per-patient counts dict with keys
    total/kept/removed/unlabeled).
    """
    source = data_cfg.get("source", "synthetic")
    if source == "synthetic":
        knob_names = (
            "idiosyncrasy",
            "separation",
            "ambiguity",
            "minute_variability",
            "no_motion_fraction",
            "mean_run_minutes",
            "force_extremes",
        )
        knobs = {k: data_cfg[k] for k in knob_names if k in data_cfg}
        profiles = make_profiles(data_cfg["patients"], seed=data_cfg.get("seed", 0), **knobs)
        raw_records = generate_corpus(profiles, data_cfg["minutes"])
    elif source == "csv":
        raw_records = []
        root = Path(data_cfg["dir"])
        stream_files = sorted(root.glob("*_stream.csv"))
        if not stream_files:
            raise PdmotorError(f"no *_stream.csv files in {root}")
        for stream_path in stream_files:
            pid = stream_path.name[: -len("_stream.csv")]
            stream = resample(read_stream_csv(stream_path))
            labels = read_labels_csv(root / f"{pid}_labels.csv")
            windows = windowize(stream, labels, patient_id=pid)
            raw_records.append(PatientRecord(patient_id=pid, windows=windows))
    else:
        raise PdmotorError(f"unknown data source {source!r}")

    policy = NoMotionPolicy()
    records, counts = [], {}
    for rec in raw_records:
        kept, removed = filter_no_motion(rec.windows, policy)
        counts[rec.patient_id] = {
            "total": len(rec.windows),
            "kept": len(kept),
            "removed": len(removed),
            "unlabeled": sum(1 for w in kept if w.label == UNLABELED),
        }
        records.append(PatientRecord(patient_id=rec.patient_id, windows=kept))
    return records, counts


def _stack(records: list[PatientRecord]):
    """Kept labeled windows pooled: (X, y, patient ids, minute indices)."""
    windows = [w for rec in records for w in rec.labeled_windows()]
    X = np.stack([w.values for w in windows])
    y = np.array([w.label for w in windows], dtype=np.int64)
    pats = np.array([w.patient_id for w in windows])
    minutes = np.array([w.minute_index for w in windows], dtype=np.int64)
    return X, y, pats, minutes


# ---------------------------------------------------------------------------
# Member training with caching
# ---------------------------------------------------------------------------

def _member_key(config: ExperimentConfig, seed: int, train_spec) -> str:
    blob = json.dumps(
        {"data": config.data, "net": config.net, "seed": seed, "train": train_spec},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _train_member(args):
    X, y, net_cfg = args
    params = network.build(net_cfg)
    params, _ = network.train(params, X, y)
    return params


def _train_pool(config: ExperimentConfig, jobs_args, cache_dir: Path):
    """Train (or load) members; jobs_args is a list of
    (key, X, y, net_cfg). Returns members merged by list index."""
    cache_dir.mkdir(parents=True, exist_ok=True)
    members = [None] * len(jobs_args)
    todo = []
    for i, (key, X, y, net_cfg) in enumerate(jobs_args):
        path = cache_dir / f"member_{key}.pdw"
        if path.exists():
            members[i] = persist.load_model(path, net_cfg)
        else:
            todo.append((i, path, (X, y, net_cfg)))
    if todo:
        if config.jobs > 1:
            with ProcessPoolExecutor(max_workers=config.jobs) as pool:
                trained = list(pool.map(_train_member, [t[2] for t in todo]))
        else:
            trained = [_train_member(t[2]) for t in todo]
        for (i, path, _), params in zip(todo, trained):
            persist.save_model(params, path)
            members[i] = params
    return members


# ---------------------------------------------------------------------------
# Prediction assembly
# ---------------------------------------------------------------------------

def _predict_fold(members, member_ids, X, y, pats, minutes, mode):
    """Aggregate member logits window-by-window into EnsemblePredictions."""
    logits = np.stack([network.predict(m, X)[1] for m in members])  # (M, n, 3)
    preds, rows = [], []
    for i in range(X.shape[0]):
        p = agg.aggregate(
            logits[:, i, :],
            mode=mode,
            patient_id=str(pats[i]),
            minute_index=int(minutes[i]),
            true_label=int(y[i]),
        )
        preds.append(p)
        for mid, lvec in zip(member_ids, logits[:, i, :]):
            rows.append((str(pats[i]), int(minutes[i]), int(y[i]), int(mid), *lvec))
    return preds, rows


def _run_folds(config: ExperimentConfig, records, cache_dir: Path):
    """LOSO loop shared by the single-CNN and ensemble kinds."""
    X, y, pats, minutes = _stack(records)
    patients = [rec.patient_id for rec in records]
    folds = loso_folds(patients)
    mode = config.aggregation

    pool_members, pool_subsets = None, None
    if config.kind == "esb_diffpat" and not config.retrain_per_fold:
        pool_subsets = sample_patient_subsets(
            patients, subset_size=config.subset_size, count=config.n_members, seed=config.seed
        )
        jobs_args = []
        for idx, subset in enumerate(pool_subsets):
            mask = np.isin(pats, list(subset))
            seed = config.seed + idx
            key = _member_key(config, seed, {"patients": sorted(subset)})
            jobs_args.append((key, X[mask], y[mask], config.net_config(seed)))
        pool_members = _train_pool(config, jobs_args, cache_dir)

    all_preds, all_member_rows = [], []
    for fold_idx, fold in enumerate(folds):
        test_patient = fold.test_patients[0]
        test_mask = pats == test_patient
        train_mask = ~test_mask
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7, fold_idx]).generate_state(1)[0])

        if config.kind == "cnn_loso":
            seed = config.seed + fold_idx
            key = _member_key(config, seed, {"patients": sorted(fold.train_patients)})
            members = _train_pool(config, [(key, X[train_mask], y[train_mask], config.net_config(seed))], cache_dir)
            member_ids = [0]
        elif config.kind == "cnn_single":
            chosen = sorted(rng.choice(list(fold.train_patients), size=config.subset_size, replace=False))
            mask = np.isin(pats, chosen)
            seed = config.seed + fold_idx
            key = _member_key(config, seed, {"patients": chosen})
            members = _train_pool(config, [(key, X[mask], y[mask], config.net_config(seed))], cache_dir)
            member_ids = [0]
        elif config.kind == "esb_dropout":
            seed = config.seed + fold_idx
            key = _member_key(config, seed, {"patients": sorted(fold.train_patients)})
            base = _train_pool(config, [(key, X[train_mask], y[train_mask], config.net_config(seed))], cache_dir)[0]
            members = []
            for i in range(config.n_members):
                mask_rng = np.random.default_rng(
                    np.random.SeedSequence([config.seed, 11, fold_idx, i]).generate_state(1)[0]
                )
                m = network.clone_params(base)
                for layer in m.layers:
                    layer.kernel *= mask_rng.random(layer.kernel.shape) >= config.drop_fraction
                m.head_weight *= mask_rng.random(m.head_weight.shape) >= config.drop_fraction
                members.append(m)
            member_ids = list(range(config.n_members))
        elif config.kind == "esb_diffinit":
            chosen = sorted(rng.choice(list(fold.train_patients), size=config.subset_size, replace=False))
            mask = np.isin(pats, chosen)
            jobs_args = []
            for i in range(config.n_members):
                seed = config.seed + fold_idx * 10000 + i
                key = _member_key(config, seed, {"patients": chosen})
                jobs_args.append((key, X[mask], y[mask], config.net_config(seed)))
            members = _train_pool(config, jobs_args, cache_dir)
            member_ids = list(range(config.n_members))
        elif config.kind == "esb_diffpat":
            if config.retrain_per_fold:
                subsets = sample_patient_subsets(
                    list(fold.train_patients),
                    subset_size=config.subset_size,
                    count=config.n_members,
                    seed=config.seed + fold_idx,
                )
                jobs_args = []
                for idx, subset in enumerate(subsets):
                    mask = np.isin(pats, list(subset))
                    seed = config.seed + fold_idx * 10000 + idx
                    key = _member_key(config, seed, {"patients": sorted(subset)})
                    jobs_args.append((key, X[mask], y[mask], config.net_config(seed)))
                members = _train_pool(config, jobs_args, cache_dir)
                member_ids = list(range(len(members)))
            else:
                member_ids = eligible_models(pool_subsets, test_patient)
                members = [pool_members[i] for i in member_ids]
        else:
            raise PdmotorError(f"kind {config.kind} is not fold-based")

        preds, rows = _predict_fold(
            members, member_ids, X[test_mask], y[test_mask], pats[test_mask], minutes[test_mask], mode
        )
        all_preds.extend(preds)
        all_member_rows.extend(rows)
    return all_preds, all_member_rows


def _run_kfold(config: ExperimentConfig, records, cache_dir: Path):
    X, y, pats, minutes = _stack(records)
    folds = kfold_windows(X.shape[0], config.kfold_k, seed=config.seed)
    all_preds, all_member_rows, fold_accs = [], [], []
    for fold_idx, fold in enumerate(folds):
        tr = np.asarray(fold.train_indices, dtype=np.int64)
        te = np.asarray(fold.test_indices, dtype=np.int64)
        seed = config.seed + fold_idx
        key = _member_key(config, seed, {"window_indices": [int(i) for i in te]})
        members = _train_pool(config, [(key, X[tr], y[tr], config.net_config(seed))], cache_dir)
        preds, rows = _predict_fold(
            members, [0], X[te], y[te], pats[te], minutes[te], config.aggregation
        )
        fold_accs.append(float(np.mean([p.aggregated_label == p.true_label for p in preds])))
        all_preds.extend(preds)
        all_member_rows.extend(rows)
    return all_preds, all_member_rows, fold_accs


# ---------------------------------------------------------------------------
# Report computation
# ---------------------------------------------------------------------------

def _accuracy(preds, labels=None) -> float:
    if not preds:
        return float("nan")
    if labels is None:
        labels = [p.aggregated_label for p in preds]
    return float(np.mean([l == p.true_label for l, p in zip(labels, preds)]))


def smoothing_sweep(preds, kernels, gap_limit) -> dict:
    """Pooled accuracy for each kernel width, smoothing per patient."""
    by_patient: dict[str, list[int]] = {}
    for i, p in enumerate(preds):
        by_patient.setdefault(p.patient_id, []).append(i)
    for pid in by_patient:
        by_patient[pid].sort(key=lambda i: preds[i].minute_index)

    out = {}
    for k in kernels:
        kernel = parse_kernel(k)
        smoothed = np.empty(len(preds), dtype=np.int64)
        for pid, idx in by_patient.items():
            minutes = [preds[i].minute_index for i in idx]
            logits = np.stack([preds[i].summed_logits for i in idx])
            labels = agg.smooth(minutes, logits, kernel, gap_limit=gap_limit)
            smoothed[np.asarray(idx)] = labels
        out[str(k)] = _accuracy(preds, smoothed.tolist())
    return out


def confidence_report(preds, fraction=0.2, min_top_share=0.3) -> dict:
    """Accuracy by confidence band per mode, per-patient top-share table,
    and interpolated-day accuracy for patients with top-share >= the
    minimum."""
    n = len(preds)
    bands = {}
    for mode in agg.CONFIDENCE_MODES:
        ranking = agg.confidence_rank(preds, mode)
        edges = [int(np.floor(q * n / 5)) for q in range(6)]
        accs = []
        for b in range(5):
            chunk = [preds[i] for i in ranking.order[edges[b] : edges[b + 1]]]
            accs.append(_accuracy(chunk))
        bands[mode] = accs

    logit_ranking = agg.confidence_rank(preds, agg.LOGIT)
    top = set(int(i) for i in logit_ranking.top_fraction(fraction))
    per_patient = {}
    for i, p in enumerate(preds):
        d = per_patient.setdefault(p.patient_id, {"all": 0, "top": 0})
        d["all"] += 1
        d["top"] += int(i in top)

    interp_labels, uncovered = agg.interpolate_confident(preds, logit_ranking, fraction)
    covered = {
        pid
        for pid, d in per_patient.items()
        if d["all"] and d["top"] / d["all"] >= min_top_share
    }
    idx = [i for i, p in enumerate(preds) if p.patient_id in covered]
    interp_acc = (
        _accuracy([preds[i] for i in idx], [int(interp_labels[i]) for i in idx])
        if idx
        else float("nan")
    )
    return {
        "bands": bands,
        "per_patient": per_patient,
        "top_total": len(top),
        "covered_patients": sorted(covered),
        "uncovered_patients": uncovered,
        "interpolation_accuracy": interp_acc,
    }


# ---------------------------------------------------------------------------
# Report writing
# ---------------------------------------------------------------------------

def _fmt_pct(x: float) -> str:
    return "" if math.isnan(x) else f"{100.0 * x:.2f}"


def _write_wide_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric"] + columns)
        for name, values in rows:
            w.writerow([name] + values)


def write_reports(out_dir, config, preds, member_rows, counts, fold_accs=None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(config.to_json() + "\n")

    patients = sorted(counts.keys())
    by_patient: dict[str, list[EnsemblePrediction]] = {p: [] for p in patients}
    for p in preds:
        by_patient[p.patient_id].append(p)

    # per-patient accuracy, Table-2-like wide layout
    windows_row = [len(by_patient[p]) for p in patients]
    correct_row = [
        int(sum(q.aggregated_label == q.true_label for q in by_patient[p])) for p in patients
    ]
    acc_row = [
        _fmt_pct(c / w) if w else "" for c, w in zip(correct_row, windows_row)
    ]
    total_w, total_c = sum(windows_row), sum(correct_row)
    _write_wide_csv(
        out_dir / "per_patient.csv",
        patients + ["All"],
        [
            ("windows", windows_row + [total_w]),
            ("correct", correct_row + [total_c]),
            ("accuracy_pct", acc_row + [_fmt_pct(total_c / total_w if total_w else float("nan"))]),
        ],
    )

    if fold_accs is not None:
        with open(out_dir / "per_fold.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fold"] + [str(i) for i in range(len(fold_accs))] + ["Avg."])
            w.writerow(
                ["accuracy_pct"]
                + [_fmt_pct(a) for a in fold_accs]
                + [_fmt_pct(float(np.mean(fold_accs)))]
            )

    # raw member dump
    with open(out_dir / "member_predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient", "minute", "true", "model_id", "logit_off", "logit_on", "logit_dys"])
        for row in member_rows:
            w.writerow([row[0], row[1], state_name(row[2]), row[3]] + [repr(float(v)) for v in row[4:]])

    # smoothing sweep
    sweep = smoothing_sweep(preds, config.smoothing_kernels, config.gap_limit)
    with open(out_dir / "smoothing_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kernel_minutes"] + [str(k) for k in config.smoothing_kernels])
        w.writerow(["accuracy_pct"] + [_fmt_pct(sweep[str(k)]) for k in config.smoothing_kernels])

    # confidence analysis
    conf = confidence_report(preds, config.confidence_fraction, config.min_top_share)
    all_row = [conf["per_patient"].get(p, {"all": 0})["all"] for p in patients]
    top_row = [conf["per_patient"].get(p, {"top": 0})["top"] for p in patients]
    share_row = [
        _fmt_pct(t / a) if a else "" for t, a in zip(top_row, all_row)
    ]
    _write_wide_csv(
        out_dir / "confidence_by_patient.csv",
        patients + ["All"],
        [
            ("all", all_row + [sum(all_row)]),
            ("top_conf", top_row + [sum(top_row)]),
            (
                "top_share_pct",
                share_row + [_fmt_pct(sum(top_row) / sum(all_row) if sum(all_row) else float("nan"))],
            ),
        ],
    )
    with open(out_dir / "confidence_bands.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["band", "agreement_acc_pct", "logit_acc_pct", "softmax_acc_pct"])
        labels = ["0-20%", "20-40%", "40-60%", "60-80%", "80-100%"]
        for b, label in enumerate(labels):
            w.writerow(
                [label]
                + [_fmt_pct(conf["bands"][m][b]) for m in agg.CONFIDENCE_MODES]
            )
    with open(out_dir / "interpolation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient", "top_share_pct", "covered"])
        for p in patients:
            d = conf["per_patient"].get(p, {"all": 0, "top": 0})
            share = _fmt_pct(d["top"] / d["all"]) if d["all"] else ""
            w.writerow([p, share, int(p in conf["covered_patients"])])
        w.writerow(["interpolation_accuracy_pct", _fmt_pct(conf["interpolation_accuracy"]), ""])

    # aggregated dump with the configured smoothing kernel and logit ranks
    dump_kernel = (
        config.dump_kernel
        if str(config.dump_kernel) in {str(k) for k in config.smoothing_kernels}
        else config.smoothing_kernels[0]
    )
    by_pid_sorted: dict[str, list[int]] = {}
    for i, p in enumerate(preds):
        by_pid_sorted.setdefault(p.patient_id, []).append(i)
    smoothed_all = np.empty(len(preds), dtype=np.int64)
    for pid in sorted(by_pid_sorted):
        idx = sorted(by_pid_sorted[pid], key=lambda i: preds[i].minute_index)
        labels = agg.smooth(
            [preds[i].minute_index for i in idx],
            np.stack([preds[i].summed_logits for i in idx]),
            parse_kernel(dump_kernel),
            gap_limit=config.gap_limit,
        )
        smoothed_all[np.asarray(idx)] = labels
    ranking = agg.confidence_rank(preds, agg.LOGIT)
    rank_of = np.empty(len(preds), dtype=np.int64)
    rank_of[ranking.order] = np.arange(len(preds))
    with open(out_dir / "aggregated_predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "patient", "minute", "true", "pred", "agreement",
                "logit_off", "logit_on", "logit_dys", "smoothed_pred", "confidence_rank",
            ]
        )
        for i, p in enumerate(preds):
            w.writerow(
                [
                    p.patient_id, p.minute_index, state_name(p.true_label),
                    state_name(p.aggregated_label), f"{p.agreement:.6f}",
                ]
                + [repr(float(v)) for v in p.summed_logits]
                + [state_name(int(smoothed_all[i])), int(rank_of[i])]
            )

    summary = {
        "kind": config.kind,
        "windows_evaluated": len(preds),
        "window_counts": counts,
        "overall_accuracy": _accuracy(preds),
        "per_patient_accuracy": {
            p: (c / w if w else None) for p, c, w in zip(patients, correct_row, windows_row)
        },
        "smoothing_sweep": sweep,
        "confidence_bands": conf["bands"],
        "interpolation_accuracy": conf["interpolation_accuracy"],
        "covered_patients": conf["covered_patients"],
        "top_total": conf["top_total"],
    }
    if fold_accs is not None:
        summary["fold_accuracies"] = fold_accs
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary


def run_experiment(config: ExperimentConfig, out_dir) -> dict:
    """Execute one experiment end to end; returns the summary dict."""
    out_dir = Path(out_dir)
    cache_dir = out_dir / "members"
    records, counts = load_records(config.data)
    fold_accs = None
    if config.kind == "kfold10":
        preds, member_rows, fold_accs = _run_kfold(config, records, cache_dir)
    else:
        preds, member_rows = _run_folds(config, records, cache_dir)
    return write_reports(out_dir, config, preds, member_rows, counts, fold_accs=fold_accs)
