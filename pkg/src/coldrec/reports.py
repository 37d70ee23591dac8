"""Delimited report files and their companion figures.

Every command that emits a CSV also renders a matching PNG next to it;
CSV content is deterministic (fixed float formatting, no timestamps).
"""

from __future__ import annotations

import csv
import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import EvalReport, RunReports, SweepRow

METRICS_HEADER = ["cohort", "model", "hr", "ndcg", "mrr", "recall", "n_evaluated"]
HISTORY_HEADER = ["epoch", "train_loss", "val_hr10"]
ABLATION_HEADER = ["model", "hr", "ndcg", "mrr", "recall"]
SWEEP_HEADER = ["lr", "hr", "ndcg", "mrr", "recall", "diverged"]
DETAIL_HEADER = ["cohort", "entity_id", "n_positives", "first_hit_rank"]

METRIC_NAMES = ("hr", "ndcg", "mrr", "recall")


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return format(x, ".10g")
    return str(x)


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def metrics_rows(reports: dict[str, EvalReport], model_label: str) -> list[list]:
    rows = []
    for cohort in ("cold_users", "cold_items", "combined", "warm"):
        if cohort not in reports:
            continue
        r = reports[cohort]
        rows.append([r.cohort, model_label, r.hr, r.ndcg, r.mrr, r.recall,
                     r.n_evaluated])
    return rows


def write_metrics_csv(path: str, reports: dict[str, EvalReport],
                      model_label: str) -> None:
    write_csv(path, METRICS_HEADER, metrics_rows(reports, model_label))


def write_details_csv(path: str, reports: dict[str, EvalReport]) -> None:
    rows = []
    for cohort, r in reports.items():
        for entity_id, n_pos, first in r.details:
            rows.append([cohort, entity_id, n_pos, first])
    write_csv(path, DETAIL_HEADER, rows)


def write_history_csv(path: str, history: list[dict]) -> None:
    rows = [[h["epoch"], h["train_loss"], h["val_hr10"]] for h in history]
    write_csv(path, HISTORY_HEADER, rows)


def write_ablation_csv(path: str, runs: list[RunReports]) -> None:
    """One row per model variant, combined cold-cohort summary."""
    rows = []
    for run in runs:
        c = run.reports["combined"]
        rows.append([run.label, c.hr, c.ndcg, c.mrr, c.recall])
    write_csv(path, ABLATION_HEADER, rows)


def write_ablation_cohorts_csv(path: str, runs: list[RunReports]) -> None:
    rows = []
    for run in runs:
        rows.extend(metrics_rows(run.reports, run.label))
    write_csv(path, METRICS_HEADER, rows)


def write_sweep_csv(path: str, rows: list[SweepRow]) -> None:
    write_csv(path, SWEEP_HEADER,
              [[r.lr, r.hr, r.ndcg, r.mrr, r.recall, int(r.diverged)]
               for r in rows])


def _save(fig, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_history(history: list[dict], path: str) -> None:
    """Training loss and validation HR@10 over epochs."""
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [h["train_loss"] for h in history], marker="o",
            color="tab:blue", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss", color="tab:blue")
    val = [h["val_hr10"] for h in history]
    if any(not math.isnan(v) for v in val):
        ax2 = ax.twinx()
        ax2.plot(epochs, val, marker="s", color="tab:orange", label="val HR@10")
        ax2.set_ylabel("validation HR@10", color="tab:orange")
        ax2.set_ylim(0, 1)
    ax.set_title("training history")
    _save(fig, path)


def plot_metrics(reports: dict[str, EvalReport], path: str,
                 title: str = "ranking metrics") -> None:
    """Grouped bars: one cluster per cohort, one bar per metric."""
    cohorts = [c for c in ("cold_users", "cold_items", "combined", "warm")
               if c in reports and reports[c].n_evaluated > 0]
    fig, ax = plt.subplots(figsize=(7, 4))
    x = range(len(cohorts))
    width = 0.2
    for i, m in enumerate(METRIC_NAMES):
        vals = [getattr(reports[c], m) for c in cohorts]
        ax.bar([xi + (i - 1.5) * width for xi in x], vals, width, label=m.upper())
    ax.set_xticks(list(x))
    ax.set_xticklabels(cohorts)
    ax.set_ylim(0, 1)
    ax.set_ylabel("metric value")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def plot_ablation(runs: list[RunReports], path: str,
                  cohort: str = "cold_users") -> None:
    """One bar cluster per model variant over the four metrics."""
    labels = [r.label for r in runs]
    fig, ax = plt.subplots(figsize=(8, 4))
    width = 0.2
    for i, m in enumerate(METRIC_NAMES):
        vals = [getattr(r.reports[cohort], m) for r in runs]
        ax.bar([xi + (i - 1.5) * width for xi in range(len(runs))], vals, width,
               label=m.upper())
    ax.set_xticks(range(len(runs)))
    ax.set_xticklabels(labels, rotation=15, ha="right")
    ax.set_ylim(0, 1)
    ax.set_title(f"ablations ({cohort})")
    ax.legend()
    _save(fig, path)


def plot_sweep(rows: list[SweepRow], path: str) -> None:
    """Metric curves against learning rate, log-scaled x axis."""
    fig, ax = plt.subplots(figsize=(6, 4))
    lrs = [r.lr for r in rows]
    for m in METRIC_NAMES:
        ax.plot(lrs, [getattr(r, m) for r in rows], marker="o", label=m.upper())
    ax.set_xscale("log")
    ax.set_xlabel("learning rate")
    ax.set_ylabel("metric value")
    ax.set_ylim(0, 1)
    ax.set_title("learning-rate sensitivity")
    ax.legend()
    _save(fig, path)
