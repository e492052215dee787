"""Command-line entry point wiring every stage of the pipeline.

Subcommands: gen-data, inspect, train, eval, kfold, attribute, sweep.
Options may come from a JSON config file (``--config``, with "model",
"train" and "synth" sections); explicit flags win over the file.  Every
run writes a ``run_manifest.json`` beside its outputs so it can be
reproduced exactly.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import format_report, integrated_gradients
from .autodiff import NumericError
from .corpus import (
    CorpusFormatError,
    CorpusManifest,
    corpus_stats,
    read_corpus,
    split_timelines,
    write_corpus,
)
from .evaluation import evaluate_timelines
from .model import ModelConfig, load_checkpoint
from .sampling import sampler_for_mode
from .synthgen import SynthConfig, generate
from .training import TrainConfig, kfold, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DEFAULT_SWEEP_WINDOWS = (32, 64, 128, 256, 512)
DEFAULT_SWEEP_MODES = ("time2vec", "learned", "zero")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage problems, not argparse's 2
        raise UsageError(message)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return obj


def _merge(cls, section: dict, flag_values: dict):
    """Dataclass from config-file section + explicit flags (flags win)."""
    kwargs = dict(section)
    kwargs.update({k: v for k, v in flag_values.items() if v is not None})
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise UsageError(f"bad {cls.__name__} options: {exc}") from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _write_run_manifest(
    out_dir: Path,
    subcommand: str,
    seed: int | None,
    config_sections: dict,
    inputs: list[str],
    outputs: list[str],
    started: float,
) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": config_sections,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "tool_version": __version__,
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def _model_flag_values(args) -> dict:
    return {
        "positional_mode": args.positional_mode,
        "window_size": args.window_size,
        "d_model": args.d_model,
        "cross_layers": args.cross_layers,
        "cross_heads": args.cross_heads,
        "self_layers": args.self_layers,
        "self_heads": args.self_heads,
        "ffn_multiplier": args.ffn_multiplier,
        "dropout": args.dropout,
        "k_max": args.k_max,
        "t2v_epsilon": args.t2v_epsilon,
        "t2v_g_mode": args.t2v_g_mode,
        "dtype": args.dtype,
    }


def _train_flag_values(args) -> dict:
    return {
        "base_lr": args.base_lr,
        "max_lr": args.max_lr,
        "cycle_epochs": args.cycle_epochs,
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "seed": args.seed,
        "grad_clip_norm": args.grad_clip_norm,
        "eval_every": args.eval_every,
        "early_stop_f1": args.early_stop_f1,
    }


def _add_model_flags(sub) -> None:
    sub.add_argument("--positional-mode", choices=("time2vec", "learned", "zero"))
    sub.add_argument("--window-size", type=int)
    sub.add_argument("--d-model", type=int)
    sub.add_argument("--cross-layers", type=int)
    sub.add_argument("--cross-heads", type=int)
    sub.add_argument("--self-layers", type=int)
    sub.add_argument("--self-heads", type=int)
    sub.add_argument("--ffn-multiplier", type=int)
    sub.add_argument("--dropout", type=float)
    sub.add_argument("--k-max", type=int)
    sub.add_argument("--t2v-epsilon", type=float)
    sub.add_argument("--t2v-g-mode", choices=("reciprocal", "identity"))
    sub.add_argument("--dtype", choices=("float64", "float32"))


def _add_train_flags(sub) -> None:
    sub.add_argument("--base-lr", type=float)
    sub.add_argument("--max-lr", type=float)
    sub.add_argument("--cycle-epochs", type=int)
    sub.add_argument("--batch-size", type=int)
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--grad-clip-norm", type=float)
    sub.add_argument("--eval-every", type=int)
    sub.add_argument("--early-stop-f1", type=float)


def _add_common(sub) -> None:
    sub.add_argument("--config", help="JSON config file; explicit flags override it")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--threads", type=int, help="cap BLAS worker threads")


def build_parser() -> _Parser:
    parser = _Parser(prog="temt", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"temt {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("gen-data", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("content", "temporal", "mixed", "null"), dest="signal_mode")
    p.add_argument("--users-per-class", type=int)
    p.add_argument("--min-posts", type=int)
    p.add_argument("--max-posts", type=int)
    p.add_argument("--text-dim", type=int)
    p.add_argument("--image-dim", type=int)
    p.add_argument("--image-prob", type=float)
    p.add_argument("--signal-strength", type=float)
    p.add_argument("--informative-fraction", type=float)
    p.add_argument("--gap-mean-pos", type=float, dest="gap_mean_hours_pos")
    p.add_argument("--gap-mean-neg", type=float, dest="gap_mean_hours_neg")
    p.add_argument("--base-gap-mean", type=float, dest="base_gap_mean_hours")
    p.add_argument("--gap-sigma", type=float, dest="gap_sigma_log")
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--val-fraction", type=float)
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("inspect", help="corpus statistics, gap table and histogram")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", help="directory for stats.json, gap_data.csv and the figure")
    p.set_defaults(func=cmd_inspect)

    p = subs.add_parser("train", help="train a classifier on a corpus")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="majority-vote evaluation of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("kfold", help="stratified k-fold cross-validation")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--val-fraction", type=float, default=0.15)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_kfold)

    p = subs.add_parser("attribute", help="integrated-gradients post attribution")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--user-id", action="append", help="repeatable; default: first test users")
    p.add_argument("--num-users", type=int, default=5)
    p.add_argument("--steps", type=int, default=128)
    p.set_defaults(func=cmd_attribute)

    p = subs.add_parser("sweep", help="window-size x positional-mode grid")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window-sizes", help="comma-separated, default 32,64,128,256,512")
    p.add_argument("--modes", help="comma-separated, default time2vec,learned,zero")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


# ---- subcommands ----


def cmd_gen_data(args) -> int:
    started = time.perf_counter()
    file_cfg = _load_config_file(args.config)
    flag_values = {
        "users_per_class": args.users_per_class,
        "min_posts": args.min_posts,
        "max_posts": args.max_posts,
        "text_dim": args.text_dim,
        "image_dim": args.image_dim,
        "image_prob": args.image_prob,
        "signal_mode": args.signal_mode,
        "signal_strength": args.signal_strength,
        "informative_fraction": args.informative_fraction,
        "gap_mean_hours_pos": args.gap_mean_hours_pos,
        "gap_mean_hours_neg": args.gap_mean_hours_neg,
        "base_gap_mean_hours": args.base_gap_mean_hours,
        "gap_sigma_log": args.gap_sigma_log,
        "train_fraction": args.train_fraction,
        "val_fraction": args.val_fraction,
        "seed": args.seed,
    }
    config = _merge(SynthConfig, file_cfg.get("synth", {}), flag_values)
    timelines, manifest = generate(config)
    out = Path(args.out)
    write_corpus(timelines, manifest, out)
    _write_run_manifest(out, "gen-data", config.seed, {"synth": config.to_json()},
                        [], [str(out)], started)
    counts = manifest.split_counts()
    print(json.dumps({"users": len(timelines), "splits": counts, "out": str(out)}))
    return EXIT_OK


def cmd_inspect(args) -> int:
    started = time.perf_counter()
    timelines, _ = read_corpus(args.corpus)
    stats = corpus_stats(timelines)
    print(json.dumps(stats.to_json(), indent=2))
    if args.out:
        from .plots import save_gap_histogram

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stats.json").write_text(json.dumps(stats.to_json(), indent=2), encoding="utf-8")
        with (out / "gap_data.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user_id", "label", "n_posts", "mean_gap_hours"])
            for i, user_id in enumerate(stats.user_ids):
                gap = stats.user_mean_gap_hours[i]
                writer.writerow([
                    user_id, int(stats.labels[i]), int(stats.posts_per_user[i]),
                    "" if not np.isfinite(gap) else f"{gap:.6f}",
                ])
        save_gap_histogram(stats, out / "gap_histogram.png")
        _write_run_manifest(out, "inspect", args.seed, {}, [args.corpus],
                            [str(out / "stats.json"), str(out / "gap_data.csv"),
                             str(out / "gap_histogram.png")], started)
    return EXIT_OK


def _build_configs(args, manifest: CorpusManifest) -> tuple[ModelConfig, TrainConfig, dict]:
    file_cfg = _load_config_file(args.config)
    model_section = dict(file_cfg.get("model", {}))
    model_section.setdefault("text_dim", manifest.text_dim)
    model_section.setdefault("image_dim", manifest.image_dim)
    model_config = _merge(ModelConfig, model_section, _model_flag_values(args))
    if model_config.text_dim != manifest.text_dim or model_config.image_dim != manifest.image_dim:
        raise UsageError(
            f"model dims ({model_config.text_dim}, {model_config.image_dim}) "
            f"do not match corpus ({manifest.text_dim}, {manifest.image_dim})"
        )
    if model_config.positional_mode == "learned" and model_config.window_size > model_config.table_rows:
        raise UsageError(
            f"learned mode: window size {model_config.window_size} exceeds k_max {model_config.table_rows}"
        )
    train_config = _merge(TrainConfig, file_cfg.get("train", {}), _train_flag_values(args))
    return model_config, train_config, file_cfg


def cmd_train(args) -> int:
    started = time.perf_counter()
    timelines, manifest = read_corpus(args.corpus)
    model_config, train_config, _ = _build_configs(args, manifest)
    out = Path(args.out)
    result = train(timelines, manifest, model_config, train_config,
                   out_dir=out, quiet=not args.verbose)
    from .plots import save_training_curves

    save_training_curves([r.to_json() for r in result.log], out / "training_curves.png")
    _write_run_manifest(
        out, "train", train_config.seed,
        {"model": model_config.to_json(), "train": train_config.to_json()},
        [args.corpus],
        [str(out / "checkpoint.bin"), str(out / "train_log.jsonl"),
         str(out / "training_curves.png")],
        started,
    )
    best = result.best_val_metrics
    print(json.dumps({
        "best_epoch": result.best_epoch,
        "best_val_f1": None if best is None else best.f1,
        "epochs_run": len(result.log),
        "checkpoint": str(out / "checkpoint.bin"),
    }))
    return EXIT_OK


def cmd_eval(args) -> int:
    started = time.perf_counter()
    params = load_checkpoint(args.checkpoint)
    config = params.config
    timelines, manifest = read_corpus(args.corpus)
    if config.text_dim != manifest.text_dim or config.image_dim != manifest.image_dim:
        raise CorpusFormatError(
            f"checkpoint dims ({config.text_dim}, {config.image_dim}) do not match "
            f"corpus ({manifest.text_dim}, {manifest.image_dim})"
        )
    groups = split_timelines(timelines, manifest)
    subset = groups[args.split]
    if not subset:
        raise CorpusFormatError(f"split {args.split!r} is empty")
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    metrics, votes = evaluate_timelines(subset, params, config, rng, manifest.image_dim)
    report = {
        "metrics": metrics.to_json(),
        "per_user": [v.to_json() for v in votes],
        "config": config.to_json(),
        "seed": seed,
        "checkpoint": str(args.checkpoint),
        "corpus": str(args.corpus),
        "split": args.split,
    }
    print(json.dumps({"metrics": report["metrics"], "seed": seed,
                      "checkpoint": report["checkpoint"], "corpus": report["corpus"]}))
    if args.out:
        from .plots import save_probability_histogram

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
        labels = {tl.user_id: tl.label for tl in subset}
        with (out / "per_user_votes.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user_id", "label", "final_label", "votes_positive", "mean_probability"])
            for v in votes:
                writer.writerow([v.user_id, labels[v.user_id], v.final_label,
                                 v.votes_positive, f"{v.mean_probability:.6f}"])
        save_probability_histogram(
            np.array([v.mean_probability for v in votes]),
            np.array([labels[v.user_id] for v in votes]),
            out / "probability_histogram.png",
        )
        _write_run_manifest(out, "eval", seed, {"model": config.to_json()},
                            [args.checkpoint, args.corpus],
                            [str(out / "eval_report.json"), str(out / "per_user_votes.csv"),
                             str(out / "probability_histogram.png")], started)
    return EXIT_OK


def cmd_kfold(args) -> int:
    started = time.perf_counter()
    timelines, manifest = read_corpus(args.corpus)
    model_config, train_config, _ = _build_configs(args, manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = kfold(timelines, manifest, model_config, train_config,
                   k=args.k, val_fraction=args.val_fraction, out_dir=out)
    (out / "kfold_report.json").write_text(json.dumps(result.to_json(), indent=2), encoding="utf-8")
    _write_run_manifest(
        out, "kfold", train_config.seed,
        {"model": model_config.to_json(), "train": train_config.to_json(), "k": args.k},
        [args.corpus], [str(out / "kfold_report.json")], started,
    )
    print(json.dumps({"mean": result.mean, "std": result.std}))
    return EXIT_OK


def cmd_attribute(args) -> int:
    started = time.perf_counter()
    params = load_checkpoint(args.checkpoint)
    config = params.config
    timelines, manifest = read_corpus(args.corpus)
    by_id = {tl.user_id: tl for tl in timelines}
    if args.user_id:
        missing = [u for u in args.user_id if u not in by_id]
        if missing:
            raise CorpusFormatError(f"user ids not in corpus: {missing}")
        targets = [by_id[u] for u in args.user_id]
    else:
        groups = split_timelines(timelines, manifest)
        targets = (groups["test"] or timelines)[: args.num_users]
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    sampler = sampler_for_mode(config.positional_mode)

    from .plots import save_attribution_chart

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for tl in targets:
        window = sampler(tl, config.window_size, rng, manifest.image_dim)
        report = integrated_gradients(window, params, config, steps=args.steps)
        timestamps = np.array([p.timestamp for p in tl.posts])
        base = out / f"attribution_{tl.user_id}"
        Path(f"{base}.json").write_text(json.dumps(report.to_json(), indent=2), encoding="utf-8")
        Path(f"{base}.txt").write_text(format_report(report, timestamps) + "\n", encoding="utf-8")
        save_attribution_chart(report, f"{base}.png")
        outputs += [f"{base}.json", f"{base}.txt", f"{base}.png"]
        print(f"user {tl.user_id}: p={report.predicted_probability:.4f} "
              f"residual={report.completeness_residual:.2e}")
    _write_run_manifest(out, "attribute", seed, {"model": config.to_json(), "steps": args.steps},
                        [args.checkpoint, args.corpus], outputs, started)
    return EXIT_OK


def _parse_grid(text: str | None, default: tuple, cast) -> list:
    if text is None:
        return list(default)
    try:
        return [cast(part.strip()) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise UsageError(f"bad grid value: {exc}") from exc


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    timelines, manifest = read_corpus(args.corpus)
    window_sizes = _parse_grid(args.window_sizes, DEFAULT_SWEEP_WINDOWS, int)
    modes = _parse_grid(args.modes, DEFAULT_SWEEP_MODES, str)
    for mode in modes:
        if mode not in DEFAULT_SWEEP_MODES:
            raise UsageError(f"unknown positional mode {mode!r}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in window_sizes:
        for mode in modes:
            cell_args = argparse.Namespace(**vars(args))
            cell_args.window_size = k
            cell_args.positional_mode = mode
            model_config, train_config, _ = _build_configs(cell_args, manifest)
            cell_out = out / f"k{k}_{mode}"
            result = train(timelines, manifest, model_config, train_config, out_dir=cell_out)
            groups = split_timelines(timelines, manifest)
            rng = np.random.default_rng(np.random.SeedSequence((train_config.seed, k, hash(mode) & 0xFFFF)))
            metrics, _ = evaluate_timelines(groups["test"], result.best_params,
                                            model_config, rng, manifest.image_dim)
            row = {
                "window_size": k,
                "positional_mode": mode,
                "f1": metrics.f1,
                "precision": metrics.precision,
                "recall": metrics.recall,
                "accuracy": metrics.accuracy,
                "auc": metrics.auc,
                "best_epoch": result.best_epoch,
            }
            rows.append(row)
            print(json.dumps(row))

    from .plots import save_sweep_grid

    with (out / "sweep_results.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    (out / "sweep_results.json").write_text(json.dumps(rows, indent=2), encoding="utf-8")
    save_sweep_grid(rows, out / "sweep_f1.png")
    _write_run_manifest(
        out, "sweep", args.seed,
        {"window_sizes": window_sizes, "modes": modes},
        [args.corpus],
        [str(out / "sweep_results.csv"), str(out / "sweep_results.json"), str(out / "sweep_f1.png")],
        started,
    )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", None):
            try:
                from threadpoolctl import threadpool_limits

                with threadpool_limits(limits=args.threads):
                    return args.func(args)
            except ImportError:
                print("warning: threadpoolctl unavailable, --threads ignored", file=sys.stderr)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
