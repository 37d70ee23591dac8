"""Command-line surface: prepare, synth, train, evaluate, ablate, sweep.

Exit codes: 0 success, 2 configuration or missing input, 3 parse or
validation failure in raw data, 4 integrity failure (checkpoint or
schema hash). Logs go to stderr; data products go to files under --out.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import data, evaluation, model, reports, training
from .config import ConfigError, RunConfig, resolve_config, write_manifest

log = logging.getLogger("coldrec")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_INTEGRITY = 4


class IntegrityError(Exception):
    pass


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. train.learning_rate=0.01")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coldrec",
        description="Cold-start recommender: data preparation, training and evaluation")
    parser.add_argument("--log-level", default=None,
                        help="logging level (default INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse raw .dat files and write the cold split")
    p.add_argument("--data-dir", required=True, help="directory with ratings/users/movies.dat")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threshold", type=int, default=None)
    p.add_argument("--user-frac", type=float, default=None)
    p.add_argument("--item-frac", type=float, default=None)
    p.add_argument("--seed", type=int, default=None, help="data seed for the split")
    _add_config_args(p)

    p = sub.add_parser("synth", help="generate a synthetic MovieLens-format corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--items", type=int, default=200)
    p.add_argument("--topics", type=int, default=4)

    p = sub.add_parser("train", help="train on a prepared dataset")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--details", action="store_true",
                   help="also write per-entity detail rows")
    _add_config_args(p)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the cold cohorts")
    p.add_argument("--checkpoint", required=True,
                   help="checkpoint base path (without .json/.bin)")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--details", action="store_true")
    _add_config_args(p)

    p = sub.add_parser("ablate", help="run the four-variant ablation table")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_args(p)

    p = sub.add_parser("sweep", help="learning-rate sensitivity sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_args(p)
    return parser


def _resolve(args, flag_values=None) -> RunConfig:
    overrides = getattr(args, "override", [])
    config_path = getattr(args, "config", None)
    return resolve_config(config_path, overrides, flag_values)


def _load_prepared(path: str) -> data.PreparedDataset:
    if not os.path.isdir(path):
        raise FileNotFoundError(path)
    return data.load_prepared(path)


def _print_reports(run_reports: dict[str, evaluation.EvalReport]) -> None:
    for cohort in ("cold_users", "cold_items", "combined", "warm"):
        if cohort not in run_reports:
            continue
        r = run_reports[cohort]
        print(f"{cohort}: HR@K={r.hr:.4f} NDCG@K={r.ndcg:.4f} MRR={r.mrr:.4f} "
              f"Recall@K={r.recall:.4f} (n={r.n_evaluated})")


def cmd_prepare(args) -> int:
    started = datetime.now(timezone.utc)
    flags = {"data_dir": args.data_dir, "out_dir": args.out}
    if args.seed is not None:
        flags["data_seed"] = args.seed
    if args.threshold is not None:
        flags["threshold"] = args.threshold
    if args.user_frac is not None:
        flags["user_frac"] = args.user_frac
    if args.item_frac is not None:
        flags["item_frac"] = args.item_frac
    rc = _resolve(args, flags)
    users, items, ratings = data.load_movielens_dir(args.data_dir)
    prepared = data.prepare_dataset(users, items, ratings,
                                    threshold=rc["threshold"],
                                    user_frac=rc["user_frac"],
                                    item_frac=rc["item_frac"],
                                    seed=rc["data_seed"])
    written = data.save_prepared(args.out, prepared)
    s = prepared.stats
    print(f"users: {s['n_users']}")
    print(f"items: {s['n_items']}")
    print(f"ratings: {s['n_ratings']}")
    print(f"density: {100.0 * s['density']:.2f}%")
    print(f"positives (rating >= {rc['threshold']}): {s['n_positives']}")
    print(f"train pairs: {s['n_train_pairs']}")
    print(f"cold users: {s['n_cold_users']} ({s['n_test_cold_user_pairs']} test pairs)")
    print(f"cold items: {s['n_cold_items']} ({s['n_test_cold_item_pairs']} test pairs)")
    inputs = [os.path.join(args.data_dir, n)
              for n in ("ratings.dat", "users.dat", "movies.dat")]
    write_manifest(args.out, "prepare", rc.to_dict(), inputs,
                   written, started)
    return EXIT_OK


def cmd_synth(args) -> int:
    users, items, ratings = data.synthetic_dataset(args.seed, args.users,
                                                   args.items, args.topics)
    data.write_movielens_files(args.out, users, items, ratings)
    print(f"wrote synthetic corpus: {len(users)} users, {len(items)} items, "
          f"{len(ratings)} ratings -> {args.out}")
    return EXIT_OK


def _prepared_inputs(data_dir: str) -> list[str]:
    names = ["schema.json", "split.json", "train.csv", "test_cold_users.csv",
             "test_cold_items.csv", "features_users.json", "features_items.json"]
    return [os.path.join(data_dir, n) for n in names]


def cmd_train(args) -> int:
    started = datetime.now(timezone.utc)
    rc = _resolve(args, {"data_dir": args.data, "out_dir": args.out})
    prepared = _load_prepared(args.data)
    cfg = rc.train_config()
    eval_cfg = rc.eval_config(default_seed=prepared.data_seed)
    run = evaluation.train_and_evaluate(prepared.split, prepared.user_feats,
                                        prepared.item_feats, cfg, eval_cfg)
    os.makedirs(args.out, exist_ok=True)
    sid = data.schema_hash(prepared.user_schema, prepared.item_schema)
    ckpt_base = os.path.join(args.out, "checkpoint")
    training.save_checkpoint(run.result.params, {
        "train_config": cfg.to_dict(),
        "eval_config": eval_cfg.to_dict(),
        "schema_hash": sid,
        "history": run.result.history,
        "best_epoch": run.result.best_epoch,
    }, ckpt_base)
    artifacts = [ckpt_base + ".json", ckpt_base + ".bin"]

    history_csv = os.path.join(args.out, "history.csv")
    reports.write_history_csv(history_csv, run.result.history)
    reports.plot_history(run.result.history, os.path.join(args.out, "history.png"))
    all_reports = dict(run.reports)
    all_reports["warm"] = run.warm
    report_csv = os.path.join(args.out, "report.csv")
    reports.write_metrics_csv(report_csv, all_reports, "full")
    reports.plot_metrics(all_reports, os.path.join(args.out, "metrics.png"))
    artifacts += [history_csv, os.path.join(args.out, "history.png"),
                  report_csv, os.path.join(args.out, "metrics.png")]
    if args.details:
        detail_csv = os.path.join(args.out, "details.csv")
        reports.write_details_csv(detail_csv, run.reports)
        artifacts.append(detail_csv)
    _print_reports(all_reports)
    write_manifest(args.out, "train", rc.to_dict(), _prepared_inputs(args.data),
                   artifacts, started,
                   extra={"schema_hash": sid, "model_flags": run.flags(),
                          "best_epoch": run.result.best_epoch,
                          "stopped_early": run.result.stopped_early})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = datetime.now(timezone.utc)
    rc = _resolve(args, {"data_dir": args.data, "out_dir": args.out})
    prepared = _load_prepared(args.data)
    values, manifest = training.load_checkpoint(args.checkpoint)
    sid = data.schema_hash(prepared.user_schema, prepared.item_schema)
    if manifest.get("schema_hash") != sid:
        raise IntegrityError(
            f"checkpoint schema hash {manifest.get('schema_hash')!r} does not match "
            f"prepared dataset {sid!r}")
    params = training.restore_model(values, manifest, prepared.user_schema,
                                    prepared.item_schema)
    cfg = training.TrainConfig.from_dict(manifest["train_config"])
    # rebuild the training-time graph: the validation carve is a pure
    # function of the split and the train seed
    core, val = training.carve_validation(prepared.split.train, cfg,
                                          np.random.default_rng(cfg.seed))
    graph = data.build_graph(core)
    eval_cfg = rc.eval_config(default_seed=prepared.data_seed)
    u_emb, v_emb = model.materialize_embeddings(prepared.user_feats,
                                                prepared.item_feats, graph,
                                                params, params.config)
    run_reports = evaluation.evaluate(prepared.split, u_emb, v_emb, eval_cfg)
    run_reports["warm"] = evaluation.evaluate_warm_validation(val, u_emb, v_emb,
                                                              eval_cfg)
    os.makedirs(args.out, exist_ok=True)
    report_csv = os.path.join(args.out, "report.csv")
    reports.write_metrics_csv(report_csv, run_reports, "checkpoint")
    reports.plot_metrics(run_reports, os.path.join(args.out, "metrics.png"))
    artifacts = [report_csv, os.path.join(args.out, "metrics.png")]
    if args.details:
        detail_csv = os.path.join(args.out, "details.csv")
        reports.write_details_csv(detail_csv, run_reports)
        artifacts.append(detail_csv)
    _print_reports(run_reports)
    write_manifest(args.out, "evaluate", rc.to_dict(),
                   _prepared_inputs(args.data) + [args.checkpoint + ".json",
                                                  args.checkpoint + ".bin"],
                   artifacts, started, extra={"schema_hash": sid})
    return EXIT_OK


def cmd_ablate(args) -> int:
    started = datetime.now(timezone.utc)
    rc = _resolve(args, {"data_dir": args.data, "out_dir": args.out})
    prepared = _load_prepared(args.data)
    cfg = rc.train_config()
    eval_cfg = rc.eval_config(default_seed=prepared.data_seed)
    runs = evaluation.ablation_suite(prepared.split, prepared.user_feats,
                                     prepared.item_feats, cfg, eval_cfg)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "ablation.csv")
    cohort_csv = os.path.join(args.out, "ablation_by_cohort.csv")
    png_path = os.path.join(args.out, "ablation.png")
    reports.write_ablation_csv(csv_path, runs)
    reports.write_ablation_cohorts_csv(cohort_csv, runs)
    reports.plot_ablation(runs, png_path)
    for run in runs:
        r = run.reports["cold_users"]
        print(f"{run.label}: cold-user HR@K={r.hr:.4f} NDCG@K={r.ndcg:.4f} "
              f"MRR={r.mrr:.4f} Recall@K={r.recall:.4f}")
    write_manifest(args.out, "ablate", rc.to_dict(), _prepared_inputs(args.data),
                   [csv_path, cohort_csv, png_path], started)
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = datetime.now(timezone.utc)
    rc = _resolve(args, {"data_dir": args.data, "out_dir": args.out})
    prepared = _load_prepared(args.data)
    cfg = rc.train_config()
    eval_cfg = rc.eval_config(default_seed=prepared.data_seed)
    rows = evaluation.lr_sweep(prepared.split, prepared.user_feats,
                               prepared.item_feats, cfg, eval_cfg)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "sweep.csv")
    png_path = os.path.join(args.out, "sweep.png")
    reports.write_sweep_csv(csv_path, rows)
    reports.plot_sweep(rows, png_path)
    for r in rows:
        status = " (diverged)" if r.diverged else ""
        print(f"lr={r.lr}: HR@K={r.hr:.4f} NDCG@K={r.ndcg:.4f} MRR={r.mrr:.4f} "
              f"Recall@K={r.recall:.4f}{status}")
    write_manifest(args.out, "sweep", rc.to_dict(), _prepared_inputs(args.data),
                   [csv_path, png_path], started)
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, (args.log_level or "INFO").upper(),
                                      logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"error: missing input: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except data.ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except data.ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except training.CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    except IntegrityError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY


if __name__ == "__main__":
    sys.exit(main())
