"""Command-line interface.

Subcommands: synth, preprocess, train, evaluate, sweep-smoothing,
confidence-report, cam, gradcheck. Usage errors exit 2 (argparse);
data/config errors print one structured `error: ...` line and exit 1.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import aggregation as agg
from . import cam as cam_mod
from . import network, persist
from .aggregation import EnsemblePrediction
from .errors import PdmotorError
from .experiments import (
    ExperimentConfig,
    parse_kernel,
    confidence_report,
    load_records,
    run_experiment,
    smoothing_sweep,
)
from .network import NetConfig
from .states import state_code, state_name
from .synth import export_corpus, generate_corpus, make_profiles


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic patient corpus as CSV files")
    p.add_argument("--patients", type=int, required=True)
    p.add_argument("--minutes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--ambiguity", type=float, default=0.25)
    p.add_argument("--idiosyncrasy", type=float, default=1.0)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--no-motion-fraction", type=float, default=0.1)
    p.add_argument("--mean-run-minutes", type=float, default=22.5)
    p.add_argument("--raw-rate", type=float, default=60.0,
                   help="output sample rate; use 62.5 to exercise resampling")


def _cmd_synth(args):
    profiles = make_profiles(
        args.patients,
        seed=args.seed,
        ambiguity=args.ambiguity,
        idiosyncrasy=args.idiosyncrasy,
        separation=args.separation,
        no_motion_fraction=args.no_motion_fraction,
        mean_run_minutes=args.mean_run_minutes,
    )
    records = generate_corpus(profiles, args.minutes)
    written = export_corpus(records, args.out, rate=args.raw_rate)
    print(f"wrote {len(written)} files for {args.patients} patients to {args.out}")
    return 0


def _add_preprocess(sub):
    p = sub.add_parser("preprocess", help="streams -> filtered windows (.npz per patient)")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)


def _cmd_preprocess(args):
    records, counts = load_records({"source": "csv", "dir": args.in_dir})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        np.savez(
            out / f"{rec.patient_id}_windows.npz",
            values=np.stack([w.values for w in rec.windows]) if rec.windows else np.zeros((0, 3600, 3)),
            minute_index=np.array([w.minute_index for w in rec.windows], dtype=np.int64),
            label=np.array([w.label for w in rec.windows], dtype=np.int64),
        )
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient", "total", "kept", "removed_no_motion", "unlabeled"])
        for pid in sorted(counts):
            c = counts[pid]
            w.writerow([pid, c["total"], c["kept"], c["removed"], c["unlabeled"]])
    total = sum(c["kept"] for c in counts.values())
    print(f"kept {total} windows across {len(counts)} patients -> {out}")
    return 0


def _add_train(sub):
    p = sub.add_parser("train", help="train one network on a corpus and save its weights")
    p.add_argument("--data", required=True, help="directory of *_stream.csv/*_labels.csv")
    p.add_argument("--out", required=True, help="weight file path")
    p.add_argument("--width-scale", type=int, default=16)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)


def _cmd_train(args):
    records, _ = load_records({"source": "csv", "dir": args.data})
    windows = [w for rec in records for w in rec.labeled_windows()]
    if not windows:
        raise PdmotorError("no labeled motion windows to train on")
    X = np.stack([w.values for w in windows])
    y = np.array([w.label for w in windows])
    cfg = NetConfig(
        width_scale=args.width_scale,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
    )
    params = network.build(cfg)
    params, trace = network.train(params, X, y)
    persist.save_model(params, args.out)
    last = [t for t in trace if "accuracy" in t][-1]
    print(f"trained {cfg.epochs} epochs, final training accuracy {last['accuracy']:.3f}; saved {args.out}")
    return 0


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="run an experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--width-scale", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)


def _cmd_evaluate(args):
    config = ExperimentConfig.from_json(Path(args.config).read_text())
    if args.seed is not None:
        config.seed = args.seed
    if args.width_scale is not None:
        config.net["width_scale"] = args.width_scale
    if args.jobs is not None:
        config.jobs = args.jobs
    summary = run_experiment(config, args.out)
    print(f"{config.kind}: overall accuracy {100 * summary['overall_accuracy']:.2f}% "
          f"on {summary['windows_evaluated']} windows; reports in {args.out}")
    return 0


def _read_member_predictions(path):
    """Rebuild EnsemblePredictions from a member_predictions.csv dump."""
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for r in reader:
            key = (r["patient"], int(r["minute"]))
            entry = rows.setdefault(key, {"true": state_code(r["true"]), "logits": []})
            entry["logits"].append([float(r["logit_off"]), float(r["logit_on"]), float(r["logit_dys"])])
    preds = []
    for (pid, minute), entry in sorted(rows.items()):
        preds.append(
            agg.aggregate(
                np.asarray(entry["logits"]),
                mode=agg.LOGIT_SUM,
                patient_id=pid,
                minute_index=minute,
                true_label=entry["true"],
            )
        )
    return preds


def _add_sweep(sub):
    p = sub.add_parser("sweep-smoothing", help="smoothing-kernel sweep over a prediction dump")
    p.add_argument("--preds", required=True, help="member_predictions.csv from an evaluate run")
    p.add_argument("--kernels", default="0,5,11,31,61,181,inf")
    p.add_argument("--gap-limit", type=int, default=10)
    p.add_argument("--out", required=True)


def _cmd_sweep(args):
    preds = _read_member_predictions(args.preds)
    kernels = [k.strip() for k in args.kernels.split(",")]
    for k in kernels:
        parse_kernel(k)  # validate before running
    sweep = smoothing_sweep(preds, kernels, args.gap_limit)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kernel_minutes"] + kernels)
        w.writerow(["accuracy_pct"] + [f"{100 * sweep[k]:.2f}" for k in kernels])
    best = max(kernels, key=lambda k: sweep[k])
    print(f"best kernel {best}: {100 * sweep[best]:.2f}%; wrote {args.out}")
    return 0


def _add_confidence(sub):
    p = sub.add_parser("confidence-report", help="confidence bands and interpolation from a dump")
    p.add_argument("--preds", required=True, help="member_predictions.csv from an evaluate run")
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--min-top-share", type=float, default=0.3)
    p.add_argument("--out", required=True)


def _cmd_confidence(args):
    preds = _read_member_predictions(args.preds)
    report = confidence_report(preds, args.fraction, args.min_top_share)
    Path(args.out).write_text(json.dumps(report, sort_keys=True, indent=2, default=str) + "\n")
    accs = ", ".join(f"{100 * a:.1f}" for a in report["bands"]["logit"])
    print(f"logit-band accuracies (best to worst 20% bands): {accs}; wrote {args.out}")
    return 0


def _add_cam(sub):
    p = sub.add_parser("cam", help="class-activation overlay for one window")
    p.add_argument("--model", required=True, help="weight file")
    p.add_argument("--width-scale", type=int, default=16)
    p.add_argument("--data", required=True, help="directory of stream/label CSVs")
    p.add_argument("--patient", required=True)
    p.add_argument("--minute", type=int, required=True)
    p.add_argument("--state", default="DYS", help="class to visualize: OFF, ON, or DYS")
    p.add_argument("--out", required=True, help="SVG path (CSV sidecar written next to it)")


def _cmd_cam(args):
    cfg = NetConfig(width_scale=args.width_scale)
    params = persist.load_model(args.model, cfg)
    records, _ = load_records({"source": "csv", "dir": args.data})
    for rec in records:
        if rec.patient_id == args.patient:
            break
    else:
        raise PdmotorError(f"patient {args.patient!r} not found in {args.data}")
    for w in rec.windows:
        if w.minute_index == args.minute:
            break
    else:
        raise PdmotorError(f"minute {args.minute} not found for patient {args.patient} (no-motion removed?)")
    m = cam_mod.compute_cam(params, w)
    cam_mod.export_overlay(w, m, state_code(args.state), args.out)
    print(f"window label {state_name(w.label)}, logits {np.round(m.logits, 3).tolist()}; wrote {args.out}")
    return 0


def _add_gradcheck(sub):
    p = sub.add_parser("gradcheck", help="finite-difference check of the network gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width-scale", type=int, default=64)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--tolerance", type=float, default=1e-4)


def _cmd_gradcheck(args):
    cfg = NetConfig(width_scale=args.width_scale, seed=args.seed)
    params = network.build(cfg)
    rng = np.random.default_rng(args.seed)
    X = rng.normal(size=(args.batch, 3600, 3))
    y = rng.integers(0, 3, size=args.batch)
    err = network.finite_difference_check(params, X, y, h=args.h)
    print(f"max relative gradient error: {err:.3e} "
          f"({params.parameter_count()} parameters, width_scale {args.width_scale})")
    return 0 if err < args.tolerance else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pdmotor",
        description="Motor-state assessment from wrist accelerometer windows",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_synth, _add_preprocess, _add_train, _add_evaluate,
                _add_sweep, _add_confidence, _add_cam, _add_gradcheck):
        add(sub)
    args = parser.parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "preprocess": _cmd_preprocess,
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "sweep-smoothing": _cmd_sweep,
        "confidence-report": _cmd_confidence,
        "cam": _cmd_cam,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (PdmotorError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
