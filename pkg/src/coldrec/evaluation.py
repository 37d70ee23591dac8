"""Cold-start ranking evaluation and the experiment harnesses built on it.

Each evaluated entity ranks its held-out positives against sampled
negatives; HR/NDCG/MRR/Recall are averaged per cohort. The degenerate
matrix-factorization baseline, the ablation table and the learning-rate
sweep all reuse the same train + evaluate path under switched configs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import model as mdl
from . import training as tr
from .data import ColdStartSplit, SideFeatures

log = logging.getLogger(__name__)

LR_SWEEP_DEFAULT = (0.001, 0.005, 0.01, 0.05, 0.1)

ABLATION_ORDER = (
    ("full", {}),
    ("no_adaptive_selection", {"adaptive_selection": False}),
    ("no_multimodal_fusion", {"multimodal_fusion": False}),
    ("no_contrastive", {"contrastive": False}),
)


@dataclass
class EvalConfig:
    k: int = 10
    candidate_negatives: int = 99
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.candidate_negatives + 1 <= self.k:
            raise ValueError("candidate count must exceed k")

    def to_dict(self) -> dict:
        return {"k": self.k, "candidate_negatives": self.candidate_negatives,
                "seed": self.seed}

    @staticmethod
    def from_dict(d: dict) -> "EvalConfig":
        return EvalConfig(**d)


class UserMetrics(NamedTuple):
    hr: float
    ndcg: float
    recall: float
    rr: float


@dataclass
class EvalReport:
    cohort: str  # cold_users | cold_items | warm | combined
    hr: float
    ndcg: float
    mrr: float
    recall: float
    n_evaluated: int
    details: list[tuple[int, int, int]]  # (entity id, n positives, first-hit rank)

    def metric_row(self) -> dict:
        return {"cohort": self.cohort, "hr": self.hr, "ndcg": self.ndcg,
                "mrr": self.mrr, "recall": self.recall,
                "n_evaluated": self.n_evaluated}


def rank_candidates(query_vec: np.ndarray, candidates: np.ndarray,
                    emb: np.ndarray) -> np.ndarray:
    """Order candidate ids by descending score, ties by ascending id."""
    cand = np.asarray(candidates, dtype=np.int64)
    scores = mdl.score_matrix(query_vec, emb[cand])
    order = np.lexsort((cand, -scores))
    return cand[order]


def metrics_at_k(ranked, positives, k: int) -> UserMetrics:
    """Ranking metrics for one entity; ranks are 1-based.

    MRR uses the first positive anywhere in the list; the other three
    look only at the top k.
    """
    pos = set(positives)
    if not pos:
        raise ValueError("metrics_at_k needs at least one positive")
    dcg = 0.0
    hits_in_k = 0
    first_rank = 0
    for rank, item in enumerate(ranked, start=1):
        if item in pos:
            if first_rank == 0:
                first_rank = rank
            if rank <= k:
                hits_in_k += 1
                dcg += 1.0 / math.log2(rank + 1)
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(pos)) + 1))
    hr = 1.0 if hits_in_k > 0 else 0.0
    recall = hits_in_k / len(pos)
    rr = 1.0 / first_rank if first_rank else 0.0
    return UserMetrics(hr, dcg / idcg, recall, rr)


def _aggregate(cohort: str, per_entity: list[tuple[int, int, UserMetrics, int]]) -> EvalReport:
    if not per_entity:
        return EvalReport(cohort, 0.0, 0.0, 0.0, 0.0, 0, [])
    hr = float(np.mean([m.hr for _, _, m, _ in per_entity]))
    ndcg = float(np.mean([m.ndcg for _, _, m, _ in per_entity]))
    recall = float(np.mean([m.recall for _, _, m, _ in per_entity]))
    mrr = float(np.mean([m.rr for _, _, m, _ in per_entity]))
    details = [(eid, n_pos, first) for eid, n_pos, m, first in per_entity]
    return EvalReport(cohort, hr, ndcg, mrr, recall, len(per_entity), details)


def _sample_excluding(excluded: set[int], n: int, size: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Distinct candidate ids outside the excluded set.

    Candidate lists must be duplicate-free; entities whose complement is
    smaller than the requested count rank against the whole complement.
    """
    free = n - len(excluded)
    if size >= free:
        if excluded:
            return np.setdiff1d(np.arange(n), np.fromiter(excluded, dtype=np.int64))
        return np.arange(n)
    out = np.empty(size, dtype=np.int64)
    seen: set[int] = set()
    filled = 0
    while filled < size:
        cand = int(rng.integers(0, n))
        if cand not in excluded and cand not in seen:
            seen.add(cand)
            out[filled] = cand
            filled += 1
    return out


def _first_hit_rank(ranked: np.ndarray, pos: set[int]) -> int:
    for rank, item in enumerate(ranked, start=1):
        if item in pos:
            return rank
    return 0


def evaluate(split: ColdStartSplit, u_emb: np.ndarray, v_emb: np.ndarray,
             cfg: EvalConfig) -> dict[str, EvalReport]:
    """Rank held-out positives for both cold cohorts against frozen embeddings.

    Negative candidates never collide with any positive of the evaluated
    entity, train or test side.
    """
    rng = np.random.default_rng(cfg.seed)
    inter = split.train
    user_pos_all: dict[int, set[int]] = {}
    item_pos_all: dict[int, set[int]] = {}
    for u, m in inter.positives:
        user_pos_all.setdefault(u, set()).add(m)
        item_pos_all.setdefault(m, set()).add(u)
    for u, items in split.test_cold_users.items():
        user_pos_all.setdefault(u, set()).update(items)
        for m in items:
            item_pos_all.setdefault(m, set()).add(u)
    for m, users in split.test_cold_items.items():
        item_pos_all.setdefault(m, set()).update(users)
        for u in users:
            user_pos_all.setdefault(u, set()).add(m)

    cold_user_rows = []
    for u in sorted(split.test_cold_users, key=inter.user_index.get):
        du = inter.user_index[u]
        positives = {inter.item_index[m] for m in split.test_cold_users[u]}
        excluded = {inter.item_index[m] for m in user_pos_all[u]}
        negs = _sample_excluding(excluded, inter.n_items, cfg.candidate_negatives, rng)
        cand = np.concatenate([np.fromiter(sorted(positives), dtype=np.int64), negs])
        ranked = rank_candidates(u_emb[du], cand, v_emb)
        m_ = metrics_at_k(ranked, positives, cfg.k)
        cold_user_rows.append((u, len(positives), m_, _first_hit_rank(ranked, positives)))

    cold_item_rows = []
    for m in sorted(split.test_cold_items, key=inter.item_index.get):
        dm = inter.item_index[m]
        positives = {inter.user_index[u] for u in split.test_cold_items[m]}
        excluded = {inter.user_index[u] for u in item_pos_all[m]}
        negs = _sample_excluding(excluded, inter.n_users, cfg.candidate_negatives, rng)
        cand = np.concatenate([np.fromiter(sorted(positives), dtype=np.int64), negs])
        ranked = rank_candidates(v_emb[dm], cand, u_emb)
        m_ = metrics_at_k(ranked, positives, cfg.k)
        cold_item_rows.append((m, len(positives), m_, _first_hit_rank(ranked, positives)))

    reports = {
        "cold_users": _aggregate("cold_users", cold_user_rows),
        "cold_items": _aggregate("cold_items", cold_item_rows),
    }
    reports["combined"] = combine_reports(
        [reports["cold_users"], reports["cold_items"]])
    return reports


def combine_reports(reports: list[EvalReport]) -> EvalReport:
    """Average cohort metrics weighted by evaluated-entity counts."""
    total = sum(r.n_evaluated for r in reports)
    if total == 0:
        return EvalReport("combined", 0.0, 0.0, 0.0, 0.0, 0, [])
    w = [r.n_evaluated / total for r in reports]
    return EvalReport(
        "combined",
        sum(wi * r.hr for wi, r in zip(w, reports)),
        sum(wi * r.ndcg for wi, r in zip(w, reports)),
        sum(wi * r.mrr for wi, r in zip(w, reports)),
        sum(wi * r.recall for wi, r in zip(w, reports)),
        total,
        [],
    )


def evaluate_warm_validation(val: tr.ValidationSlice | None, u_emb: np.ndarray,
                             v_emb: np.ndarray, cfg: EvalConfig) -> EvalReport:
    """Metrics over the held-out warm validation pairs (one per user)."""
    if val is None:
        return EvalReport("warm", 0.0, 0.0, 0.0, 0.0, 0, [])
    rows = []
    for r in range(val.users.shape[0]):
        du = int(val.users[r])
        positives = {int(val.held_out[r])}
        cand = np.concatenate([[val.held_out[r]], val.candidates[r]])
        ranked = rank_candidates(u_emb[du], cand, v_emb)
        m_ = metrics_at_k(ranked, positives, cfg.k)
        rows.append((du, 1, m_, _first_hit_rank(ranked, positives)))
    return _aggregate("warm", rows)


@dataclass
class RunReports:
    """Everything a single train + evaluate run produces."""

    label: str
    train_config: tr.TrainConfig
    result: tr.TrainResult
    reports: dict[str, EvalReport]
    warm: EvalReport

    def flags(self) -> dict:
        m = self.train_config.model
        return {"adaptive_selection": m.adaptive_selection,
                "multimodal_fusion": m.multimodal_fusion,
                "contrastive": m.contrastive, "gcn": m.gcn}


def train_and_evaluate(split: ColdStartSplit, user_feats: SideFeatures,
                       item_feats: SideFeatures, cfg: tr.TrainConfig,
                       eval_cfg: EvalConfig, label: str = "full") -> RunReports:
    result = tr.train(split, user_feats, item_feats, cfg)
    u_emb, v_emb = mdl.materialize_embeddings(user_feats, item_feats,
                                              result.graph, result.params, cfg.model)
    reports = evaluate(split, u_emb, v_emb, eval_cfg)
    warm = evaluate_warm_validation(result.val_slice, u_emb, v_emb, eval_cfg)
    return RunReports(label, cfg, result, reports, warm)


def mf_baseline(split: ColdStartSplit, user_feats: SideFeatures,
                item_feats: SideFeatures, cfg: tr.TrainConfig,
                eval_cfg: EvalConfig) -> RunReports:
    """Pure id-embedding dot-product trained with BCE only: every module
    switch off, same loop, same evaluation."""
    mf_model = cfg.model.ablated(multimodal_fusion=False, adaptive_selection=False,
                                 gcn=False, contrastive=False)
    mf_cfg = replace(cfg, model=mf_model)
    return train_and_evaluate(split, user_feats, item_feats, mf_cfg, eval_cfg,
                              label="matrix_factorization")


def ablation_suite(split: ColdStartSplit, user_feats: SideFeatures,
                   item_feats: SideFeatures, base_cfg: tr.TrainConfig,
                   eval_cfg: EvalConfig) -> list[RunReports]:
    """Four rows: the full model and one switch off at a time, fixed order,
    identical seeds."""
    runs = []
    for label, flags in ABLATION_ORDER:
        cfg = replace(base_cfg, model=base_cfg.model.ablated(**flags))
        runs.append(train_and_evaluate(split, user_feats, item_feats, cfg,
                                       eval_cfg, label=label))
        log.info("ablation %s: cold-user HR@%d = %.4f", label, eval_cfg.k,
                 runs[-1].reports["cold_users"].hr)
    return runs


@dataclass
class SweepRow:
    lr: float
    hr: float
    ndcg: float
    mrr: float
    recall: float
    final_train_loss: float
    diverged: bool


def lr_sweep(split: ColdStartSplit, user_feats: SideFeatures,
             item_feats: SideFeatures, base_cfg: tr.TrainConfig,
             eval_cfg: EvalConfig,
             lrs=LR_SWEEP_DEFAULT) -> list[SweepRow]:
    """One independent run per learning rate, same seeds throughout.

    A diverged run becomes a NaN row instead of aborting the sweep.
    Reported metrics are the combined cold-cohort summary.
    """
    rows = []
    for lr in lrs:
        cfg = replace(base_cfg, learning_rate=lr)
        try:
            run = train_and_evaluate(split, user_feats, item_feats, cfg, eval_cfg,
                                     label=f"lr={lr}")
        except tr.TrainingDivergedError as e:
            log.warning("lr %s diverged: %s", lr, e)
            rows.append(SweepRow(lr, float("nan"), float("nan"), float("nan"),
                                 float("nan"), float("nan"), True))
            continue
        combined = run.reports["combined"]
        rows.append(SweepRow(lr, combined.hr, combined.ndcg, combined.mrr,
                             combined.recall,
                             run.result.history[-1]["train_loss"], False))
    return rows
