"""Command-line entry point.

Subcommands cover the whole pipeline: gen-data, train, gridsearch, eval,
ablate, bench, gradcheck. Every command writes machine-readable artifacts
under the run directory and prints a one-screen summary. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numeric error.

Paper-default hyperparameters live in defaults.json next to this module;
flags override them. The seed falls back to the LUMENSEG_SEED environment
variable, then to the defaults file.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import gradcheck as gc
from .benchmark import bench_ensemble, bench_model
from .ensemble import ablation_eval, ensemble_average, evaluate_maps
from .errors import ConfigError, DataError, LumensegError
from .models import (
    VARIANTS,
    build_model,
    default_config,
    load_weights,
    save_weights,
)
from .stats import kruskal_wallis
from .training import (
    TrainConfig,
    default_trainer,
    grid_search,
    split_train_val,
    train_model,
)

DEFAULTS_PATH = os.path.join(os.path.dirname(__file__), "defaults.json")


def load_defaults():
    with open(DEFAULTS_PATH, encoding="utf-8") as fh:
        return json.load(fh)


def _opt(value, default):
    return default if value is None else value


def _resolve_seed(args, defaults):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("LUMENSEG_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"LUMENSEG_SEED must be an integer, got {env!r}") from None
    return int(defaults["seed"])


def _ensure_run_dir(args):
    os.makedirs(args.run_dir, exist_ok=True)
    return args.run_dir


def _write_csv(path, fieldnames, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in fieldnames})


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _parse_float_list(text):
    return tuple(float(v) for v in text.split(","))


def _parse_int_list(text):
    return tuple(int(v) for v in text.split(","))


def _model_samples(manifest, variant, which):
    if variant in ("M1", "M2"):
        return ds.triplet_samples(manifest, which)
    return ds.frame_samples(manifest, which)


def _frame_size(manifest):
    record = next(manifest.frames("train"), None) or next(manifest.frames(), None)
    if record is None:
        raise DataError("manifest contains no frames")
    image, _ = record.load()
    p, q = image.shape[:2]
    if p != q:
        raise ConfigError(f"models need square frames, got {p}x{q}")
    return p


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args, defaults):
    seed = _resolve_seed(args, defaults)
    manifest_path = ds.build_synthetic_dataset(
        args.out,
        seed=seed,
        size=_opt(args.size, defaults["size"]),
        frames_per_video=_opt(args.frames, defaults["frames_per_video"]) or None,
        artifact_profile=_opt(args.artifacts, defaults["artifact_profile"]),
        augmented=args.augment,
        force=args.force,
    )
    manifest = ds.load_manifest(manifest_path)
    n_videos = sum(1 for _ in manifest.videos())
    n_frames = sum(1 for _ in manifest.frames())
    print(f"wrote {manifest_path}")
    print(
        f"{len(manifest.data['patients'])} patients, {n_videos} videos, "
        f"{n_frames} frames; test patients: {', '.join(manifest.split['test'])}"
    )
    return 0


def cmd_train(args, defaults):
    seed = _resolve_seed(args, defaults)
    run_dir = _ensure_run_dir(args)
    manifest = ds.load_manifest(args.manifest)
    size = _frame_size(manifest)
    by_patient = _model_samples(manifest, args.model, "train")
    samples = ds.flatten_samples(by_patient)
    if not samples:
        raise DataError("no training samples in manifest")
    train_samples, val_samples = split_train_val(samples, 0.6, seed=seed)

    config = default_config(args.model, size=size, temporal_kernels=args.nk)
    model = build_model(config, seed=seed)
    cfg = TrainConfig(
        learning_rate=_opt(args.lr, defaults["learning_rate"]),
        batch_size=_opt(args.bs, defaults["batch_size"]),
        epochs=_opt(args.epochs, defaults["epochs"]),
        seed=seed,
        threshold=_opt(args.threshold, defaults["threshold"]),
    )
    model, history = train_model(model, train_samples, val_samples, cfg)

    weights_path = os.path.join(run_dir, f"{args.model}.lseg")
    save_weights(model, weights_path)
    _write_csv(
        os.path.join(run_dir, f"{args.model}_history.csv"),
        ["epoch", "train_loss", "train_dsc", "val_dsc"],
        history.rows(),
    )
    _write_json(
        os.path.join(run_dir, f"{args.model}_config.json"),
        {
            "model": json.loads(model.config.to_json()),
            "train": vars(cfg),
            "seed": seed,
            "train_frames": len(train_samples),
            "val_frames": len(val_samples),
        },
    )
    print(f"trained {args.model} on {len(train_samples)} samples "
          f"({len(val_samples)} validation)")
    print(f"best val DSC {history.best_val_dsc:.4f} at epoch {history.best_epoch}")
    print(f"weights: {weights_path}")
    return 0


def cmd_gridsearch(args, defaults):
    seed = _resolve_seed(args, defaults)
    run_dir = _ensure_run_dir(args)
    manifest = ds.load_manifest(args.manifest)
    size = _frame_size(manifest)
    by_patient = _model_samples(manifest, args.model, "train")

    lr_grid = args.lr_grid or tuple(defaults["lr_grid"])
    bs_grid = args.bs_grid or tuple(defaults["bs_grid"])
    if args.model in ("M1", "M2"):
        nk_grid = (3,) if args.model == "M2" else (args.nk_grid or tuple(defaults["nk_grid"]))
    else:
        nk_grid = (0,)
    trainer = default_trainer(args.model, size, seed)
    best, table = grid_search(
        trainer,
        by_patient,
        lr_grid=lr_grid,
        bs_grid=bs_grid,
        nk_grid=nk_grid,
        folds=_opt(args.folds, defaults["folds"]),
        seed=seed,
        epochs=_opt(args.epochs, defaults["grid_epochs"]),
        threads=_opt(args.threads, defaults["threads"]),
    )
    _write_csv(
        os.path.join(run_dir, f"{args.model}_cv_table.csv"),
        ["learning_rate", "batch_size", "temporal_kernels", "fold", "val_dsc"],
        table,
    )
    _write_json(
        os.path.join(run_dir, f"{args.model}_best_hp.json"),
        {
            "learning_rate": best.learning_rate,
            "batch_size": best.batch_size,
            "temporal_kernels": best.temporal_kernels,
            "seed": seed,
        },
    )
    print(f"grid search over {len(lr_grid)}x{len(bs_grid)}x{len(nk_grid)} points, "
          f"{_opt(args.folds, defaults['folds'])} folds each")
    print(f"best: lr={best.learning_rate} bs={best.batch_size}"
          + (f" nk={best.temporal_kernels}" if best.temporal_kernels else ""))
    return 0


def _predictions_for(manifest, variants, weights_dir, which="test"):
    """Per-variant stacked probability maps over the split, plus masks."""
    models = {}
    for variant in variants:
        path = os.path.join(weights_dir, f"{variant}.lseg")
        if not os.path.exists(path):
            raise DataError(f"missing weights for ensemble member {variant}: {path}")
        models[variant] = load_weights(path)
    maps = {v: [] for v in variants}
    truths = []
    rows = []
    for patient_id, video in manifest.videos(which):
        images, masks = ds.load_video(manifest, patient_id, video)
        n = images.shape[0]
        triplet_idx = ds.make_triplets(n)
        for variant in variants:
            model = models[variant]
            if model.config.is_temporal:
                batch = np.stack([
                    np.stack([images[a], images[b], images[c]]) for a, b, c in triplet_idx
                ])
            else:
                batch = images
            maps[variant].extend(model.predict_batch(batch))
        truths.extend(masks)
        rows.extend(
            {"patient": patient_id, "video": video["id"], "index": k} for k in range(n)
        )
    return models, {v: np.stack(m) for v, m in maps.items()}, np.stack(truths), rows


def cmd_eval(args, defaults):
    run_dir = _ensure_run_dir(args)
    manifest = ds.load_manifest(args.manifest)
    threshold = _opt(args.threshold, defaults["threshold"])
    variants = _requested_variants(args)

    if not args.pred_dir and not args.weights_dir:
        raise ConfigError("eval needs --weights-dir or --pred-dir")
    if args.pred_dir:
        # precomputed predictions: mask files mirroring the manifest tree
        maps = []
        truths = []
        rows = []
        from . import pnm

        for record in manifest.frames("test"):
            rel = os.path.relpath(record.mask_path, manifest.root)
            pred_path = os.path.join(args.pred_dir, rel)
            if not os.path.exists(pred_path):
                raise DataError(f"missing prediction file: {pred_path}")
            maps.append(pnm.read_mask(pred_path).astype(np.float64))
            truths.append(pnm.read_mask(record.mask_path))
            rows.append(
                {"patient": record.patient_id, "video": record.video_id, "index": record.index}
            )
        fused = np.stack(maps)
        truths = np.stack(truths)
        label = "predictions"
    else:
        _, member_maps, truths, rows = _predictions_for(
            manifest, variants, args.weights_dir
        )
        fused = np.stack([
            ensemble_average([member_maps[v][k] for v in variants])
            for k in range(truths.shape[0])
        ])
        label = "(" + ",".join(variants) + ")"

    metric_rows, summary = evaluate_maps(fused, truths, threshold)
    for meta, row in zip(rows, metric_rows):
        row.update(meta)
    out = os.path.join(run_dir, "eval_metrics.csv")
    _write_csv(out, ["patient", "video", "index", "dsc", "precision", "recall"], metric_rows)
    _write_json(os.path.join(run_dir, "eval_summary.json"),
                {"ensemble": label, "threshold": threshold, **summary})
    print(f"evaluated {label} on {len(metric_rows)} test frames")
    print(f"mean DSC {summary['dsc']:.4f}  Prec {summary['precision']:.4f}  "
          f"Rec {summary['recall']:.4f}")
    print(f"per-frame metrics: {out}")
    return 0


def _requested_variants(args):
    if getattr(args, "ensemble", None):
        variants = tuple(args.ensemble.split(","))
    elif getattr(args, "model", None):
        variants = (args.model,)
    else:
        variants = VARIANTS
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown ensemble member {v!r} (choose from {VARIANTS})")
    return variants


def cmd_ablate(args, defaults):
    run_dir = _ensure_run_dir(args)
    manifest = ds.load_manifest(args.manifest)
    threshold = _opt(args.threshold, defaults["threshold"])
    _, member_maps, truths, _ = _predictions_for(manifest, VARIANTS, args.weights_dir)

    rows, dsc_groups = ablation_eval(member_maps, truths, threshold)
    _write_csv(os.path.join(run_dir, "ablation.csv"),
               ["ensemble", "dsc", "precision", "recall"], rows)

    single_rows = []
    single_dsc = {}
    for variant in VARIANTS:
        frame_rows, summary = evaluate_maps(member_maps[variant], truths, threshold)
        single_rows.append({"model": variant, **summary})
        single_dsc[variant] = [r["dsc"] for r in frame_rows]
    _write_csv(os.path.join(run_dir, "singles.csv"),
               ["model", "dsc", "precision", "recall"], single_rows)

    h, p = kruskal_wallis([single_dsc[v] for v in VARIANTS])
    _write_json(os.path.join(run_dir, "kruskal_wallis.json"),
                {"groups": list(VARIANTS), "H": h, "p_value": p})

    print(f"ablation over {truths.shape[0]} test frames (threshold {threshold}):")
    for row in rows:
        print(f"  {row['ensemble']:>16}: DSC {row['dsc']:.4f}  "
              f"Prec {row['precision']:.4f}  Rec {row['recall']:.4f}")
    print(f"Kruskal-Wallis over single-model DSC: H={h:.4f}, p={p:.4g}")
    return 0


def cmd_bench(args, defaults):
    run_dir = _ensure_run_dir(args)
    manifest = ds.load_manifest(args.manifest)
    n_frames = _opt(args.frames, defaults["bench_frames"])
    if n_frames < 1:
        raise ConfigError(f"bench needs at least 1 frame, got {n_frames}")
    variants = _requested_variants(args)
    models, member_samples = _bench_samples(manifest, variants, args.weights_dir, n_frames)

    standalone = [bench_model(v, models[v], member_samples[v]) for v in variants]
    ens, in_loop = bench_ensemble(models, member_samples)
    results = standalone + in_loop + [ens]
    rows = [
        {"name": r.name, "mean_ms": r.mean_ms, "std_ms": r.std_ms, "frames": r.n_frames}
        for r in results
    ]
    _write_csv(os.path.join(run_dir, "bench.csv"),
               ["name", "mean_ms", "std_ms", "frames"], rows)
    for r in results:
        print(r)
    loop_sum = sum(r.mean_ms for r in in_loop)
    print(f"in-ensemble member sum {loop_sum:.2f} ms vs sequential ensemble "
          f"{ens.mean_ms:.2f} ms")
    return 0


def _bench_samples(manifest, variants, weights_dir, n_frames):
    models = {}
    for variant in variants:
        path = os.path.join(weights_dir, f"{variant}.lseg")
        if not os.path.exists(path):
            raise DataError(f"missing weights for ensemble member {variant}: {path}")
        models[variant] = load_weights(path)
    frames = []
    triplets = []
    for patient_id, video in manifest.videos("test"):
        images, _ = ds.load_video(manifest, patient_id, video)
        idx = ds.make_triplets(images.shape[0])
        frames.extend(images)
        triplets.extend(np.stack([images[a], images[b], images[c]]) for a, b, c in idx)
        if len(frames) >= n_frames:
            break
    if not frames:
        raise DataError("no test frames to benchmark on")
    frames = frames[:n_frames]
    triplets = triplets[:n_frames]
    samples = {
        v: (triplets if models[v].config.is_temporal else frames) for v in variants
    }
    return models, samples


def cmd_gradcheck(args, defaults):
    seed = _resolve_seed(args, defaults)
    reports = gc.standard_suite(seed=seed)
    rows = []
    failed = []
    for rep in reports:
        print(rep)
        rows.append(
            {"op": rep.name, "max_rel_error": rep.max_rel_error,
             "tolerance": rep.tolerance, "passed": rep.passed}
        )
        if not rep.passed:
            failed.append(rep.name)
    if args.run_dir:
        _ensure_run_dir(args)
        _write_csv(os.path.join(args.run_dir, "gradcheck.csv"),
                   ["op", "max_rel_error", "tolerance", "passed"], rows)
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 4
    print(f"all {len(reports)} gradient checks passed")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lumenseg",
        description="Spatio-temporal lumen segmentation ensemble pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, manifest=True, run_dir=True):
        if manifest:
            p.add_argument("--manifest", required=True, help="dataset manifest JSON")
        if run_dir:
            p.add_argument("--run-dir", required=True, help="output directory for artifacts")
        p.add_argument("--seed", type=int, default=None,
                       help="run seed (falls back to LUMENSEG_SEED, then defaults)")
        p.add_argument("--threads", type=int, default=None,
                       help="parallel jobs for folds/grid points (default sequential)")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--size", type=int, default=None, help="square frame extent")
    p.add_argument("--frames", type=int, default=None, help="frames per video (default 40-60)")
    p.add_argument("--artifacts", choices=["none", "light", "full"], default=None)
    p.add_argument("--augment", action="store_true",
                   help="also write the six augmented copies of each training video")
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train one model variant")
    add_common(p)
    p.add_argument("--model", required=True, choices=list(VARIANTS))
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--bs", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--nk", type=int, default=None, help="temporal kernels (M variants)")
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("gridsearch", help="cross-validated hyperparameter grid search")
    add_common(p)
    p.add_argument("--model", required=True, choices=list(VARIANTS))
    p.add_argument("--lr-grid", type=_parse_float_list, default=None,
                   help="comma-separated learning rates")
    p.add_argument("--bs-grid", type=_parse_int_list, default=None,
                   help="comma-separated batch sizes")
    p.add_argument("--nk-grid", type=_parse_int_list, default=None,
                   help="comma-separated temporal kernel counts (M1)")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None, help="epochs per fold run")
    p.set_defaults(fn=cmd_gridsearch)

    p = sub.add_parser("eval", help="evaluate a model or ensemble on the test split")
    add_common(p)
    p.add_argument("--weights-dir", default=None, help="directory of <variant>.lseg files")
    p.add_argument("--model", choices=list(VARIANTS), default=None)
    p.add_argument("--ensemble", default=None, help="comma-separated member list")
    p.add_argument("--pred-dir", default=None,
                   help="evaluate precomputed prediction masks mirroring the dataset tree")
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="ensemble subset ablation plus Kruskal-Wallis")
    add_common(p)
    p.add_argument("--weights-dir", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("bench", help="inference timing for members and the ensemble")
    add_common(p)
    p.add_argument("--weights-dir", required=True)
    p.add_argument("--model", choices=list(VARIANTS), default=None)
    p.add_argument("--ensemble", default=None)
    p.add_argument("--frames", type=int, default=None)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--run-dir", default=None)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults = load_defaults()
    try:
        return args.fn(args, defaults)
    except LumensegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
