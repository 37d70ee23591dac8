import math

import numpy as np
import pytest

from coldrec import data, evaluation, model, training


def naive_metrics(ranked, positives, k):
    """Brute-force reference: independent loops for each metric."""
    hr = 0.0
    for item in list(ranked)[:k]:
        if item in positives:
            hr = 1.0
    hits = 0
    for item in list(ranked)[:k]:
        if item in positives:
            hits += 1
    recall = hits / len(positives)
    rr = 0.0
    for i, item in enumerate(ranked):
        if item in positives:
            rr = 1.0 / (i + 1)
            break
    dcg = 0.0
    for i, item in enumerate(list(ranked)[:k]):
        if item in positives:
            dcg += 1.0 / math.log2(i + 2)
    ideal = 0.0
    for i in range(min(k, len(positives))):
        ideal += 1.0 / math.log2(i + 2)
    return hr, dcg / ideal, recall, rr


class TestMetricsAtK:
    def test_single_positive_rank_one(self):
        m = evaluation.metrics_at_k([7, 1, 2], {7}, k=10)
        assert m == (1.0, 1.0, 1.0, 1.0)

    def test_single_positive_rank_three(self):
        m = evaluation.metrics_at_k([5, 6, 7, 8], {7}, k=10)
        assert m.ndcg == pytest.approx(1.0 / math.log2(4))
        assert m.rr == pytest.approx(1.0 / 3.0)
        assert m.hr == 1.0 and m.recall == 1.0

    def test_two_positives_split_ranks(self):
        ranked = [0, 9] + list(range(10, 37)) + [99]  # positive 9 at rank 2, 99 at rank 30
        m = evaluation.metrics_at_k(ranked, {9, 99}, k=10)
        assert m.hr == 1.0
        assert m.recall == 0.5
        assert m.rr == 0.5
        want = (1.0 / math.log2(3)) / (1.0 + 1.0 / math.log2(3))
        assert m.ndcg == pytest.approx(want, abs=1e-9)
        assert m.ndcg == pytest.approx(0.38685, abs=1e-5)

    def test_no_hit_anywhere(self):
        m = evaluation.metrics_at_k([1, 2, 3], {9}, k=2)
        assert m == (0.0, 0.0, 0.0, 0.0)

    def test_empty_positives_rejected(self):
        with pytest.raises(ValueError):
            evaluation.metrics_at_k([1, 2], set(), k=2)

    def test_oracle_equivalence_random_instances(self):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            n = int(rng.integers(5, 60))
            ranked = rng.permutation(n).tolist()
            n_pos = int(rng.integers(1, max(2, n // 3)))
            positives = set(rng.choice(n, size=n_pos, replace=False).tolist())
            k = int(rng.integers(1, 20))
            got = evaluation.metrics_at_k(ranked, positives, k)
            want = naive_metrics(ranked, positives, k)
            assert got.hr == want[0]
            assert got.ndcg == want[1]
            assert got.recall == want[2]
            assert got.rr == want[3]

    def test_single_positive_recall_equals_hr(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(3, 30))
            ranked = rng.permutation(n).tolist()
            positives = {int(rng.integers(0, n))}
            k = int(rng.integers(1, 15))
            m = evaluation.metrics_at_k(ranked, positives, k)
            assert m.recall == m.hr

    def test_all_metrics_bounded(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            n = int(rng.integers(4, 40))
            ranked = rng.permutation(n).tolist()
            n_pos = int(rng.integers(1, n))
            positives = set(rng.choice(n, size=n_pos, replace=False).tolist())
            m = evaluation.metrics_at_k(ranked, positives, int(rng.integers(1, 12)))
            for v in m:
                assert 0.0 <= v <= 1.0


class TestRankCandidates:
    def test_orders_by_score(self):
        emb = np.array([[0.9], [0.1], [0.5]])
        ranked = evaluation.rank_candidates(np.array([1.0]), [0, 1, 2], emb)
        assert ranked.tolist() == [0, 2, 1]

    def test_ties_break_by_ascending_id(self):
        emb = np.zeros((5, 2))
        ranked = evaluation.rank_candidates(np.array([1.0, 0.0]), [4, 2, 0, 3], emb)
        assert ranked.tolist() == [0, 2, 3, 4]

    def test_input_order_irrelevant(self):
        rng = np.random.default_rng(3)
        emb = rng.standard_normal((20, 4))
        q = rng.standard_normal(4)
        cand = np.arange(12)
        a = evaluation.rank_candidates(q, cand, emb)
        b = evaluation.rank_candidates(q, rng.permutation(cand), emb)
        assert np.array_equal(a, b)


class TestRandomScoreExpectation:
    def test_hr10_close_to_point_one(self):
        # 1 positive among 100 candidates, random scores: P(top10) = 0.1
        rng = np.random.default_rng(99)
        hits = 0
        n_users = 2000
        for _ in range(n_users):
            emb = rng.standard_normal((100, 3))
            q = rng.standard_normal(3)
            ranked = evaluation.rank_candidates(q, np.arange(100), emb)
            m = evaluation.metrics_at_k(ranked, {37}, k=10)
            hits += m.hr
        assert abs(hits / n_users - 0.1) <= 0.02


def toy_split(seed=21, n_users=30, n_items=30):
    users, items, ratings = data.synthetic_dataset(seed, n_users, n_items)
    inter = data.binarize(ratings, threshold=4)
    split = data.cold_start_split(inter, 0.15, 0.15, seed=seed)
    us, its = data.build_schemas(inter)
    uf = data.user_features(users, us, inter)
    itf = data.item_features(items, its, inter)
    return split, uf, itf


class TestEvaluate:
    def test_planted_oracle_scores_perfectly(self):
        split, uf, itf = toy_split()
        inter = split.train
        d = 8
        rng = np.random.default_rng(0)
        u_emb = rng.standard_normal((inter.n_users, d)) * 0.01
        v_emb = rng.standard_normal((inter.n_items, d)) * 0.01
        # plant: each cold user's positives score far above everything else
        for i, (u, items) in enumerate(sorted(split.test_cold_users.items())):
            du = inter.user_index[u]
            direction = np.zeros(d)
            direction[i % d] = 10.0
            u_emb[du] = direction
            for m in items:
                v_emb[inter.item_index[m]] = direction
        for j, (m, users) in enumerate(sorted(split.test_cold_items.items())):
            dm = inter.item_index[m]
            direction = np.zeros(d)
            direction[(j + 3) % d] = -10.0
            v_emb[dm] = direction
            for u in users:
                u_emb[inter.user_index[u]] = direction
        cfg = evaluation.EvalConfig(k=10, seed=1)
        reports = evaluation.evaluate(split, u_emb, v_emb, cfg)
        for cohort in ("cold_users", "cold_items"):
            r = reports[cohort]
            if r.n_evaluated == 0:
                continue
            assert r.hr == 1.0 and r.mrr == 1.0

    def test_deterministic(self):
        split, uf, itf = toy_split()
        rng = np.random.default_rng(5)
        u_emb = rng.standard_normal((split.train.n_users, 6))
        v_emb = rng.standard_normal((split.train.n_items, 6))
        cfg = evaluation.EvalConfig(seed=11)
        a = evaluation.evaluate(split, u_emb, v_emb, cfg)
        b = evaluation.evaluate(split, u_emb, v_emb, cfg)
        for cohort in a:
            assert a[cohort].metric_row() == b[cohort].metric_row()
            assert a[cohort].details == b[cohort].details

    def test_negatives_exclude_all_positives(self):
        rng = np.random.default_rng(1)
        # user with positives on all but 3 items: negatives must come from those 3
        excluded = set(range(97))
        out = evaluation._sample_excluding(excluded, 100, 99, rng)
        assert set(out.tolist()) <= {97, 98, 99}
        # plain rejection path
        out2 = evaluation._sample_excluding({5}, 100, 50, rng)
        assert 5 not in out2.tolist()

    def test_sampled_candidates_are_distinct(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            out = evaluation._sample_excluding({1, 2, 3}, 120, 99, rng)
            assert len(set(out.tolist())) == len(out)

    def test_combined_weighted_by_counts(self):
        a = evaluation.EvalReport("cold_users", 1.0, 1.0, 1.0, 1.0, 3, [])
        b = evaluation.EvalReport("cold_items", 0.0, 0.0, 0.0, 0.0, 1, [])
        c = evaluation.combine_reports([a, b])
        assert c.hr == pytest.approx(0.75)
        assert c.n_evaluated == 4


@pytest.fixture(scope="module")
def fixture_split():
    return toy_split(seed=31, n_users=50, n_items=50)


class TestExperimentHarnesses:
    def quick_cfg(self, **kw):
        model_kw = kw.pop("model_kw", {})
        base = dict(learning_rate=0.02, epochs=2, batch_size=256, bce_negatives=2,
                    cl_negatives=3, seed=4, early_stop_patience=50,
                    model=model.ModelConfig(embed_dim=8, **model_kw))
        base.update(kw)
        return training.TrainConfig(**base)

    def test_mf_baseline_flags_all_off(self, fixture_split):
        split, uf, itf = fixture_split
        run = evaluation.mf_baseline(split, uf, itf, self.quick_cfg(),
                                     evaluation.EvalConfig(seed=2))
        assert run.flags() == {"adaptive_selection": False, "multimodal_fusion": False,
                               "contrastive": False, "gcn": False}
        assert run.result.contrastive_draws == 0

    def test_ablation_suite_shape_and_order(self, fixture_split):
        split, uf, itf = fixture_split
        runs = evaluation.ablation_suite(split, uf, itf, self.quick_cfg(),
                                         evaluation.EvalConfig(seed=2))
        assert [r.label for r in runs] == ["full", "no_adaptive_selection",
                                           "no_multimodal_fusion", "no_contrastive"]
        for r in runs:
            for cohort in ("cold_users", "cold_items"):
                row = r.reports[cohort].metric_row()
                assert set(row) == {"cohort", "hr", "ndcg", "mrr", "recall", "n_evaluated"}

    def test_ablation_full_row_matches_standalone(self, fixture_split):
        split, uf, itf = fixture_split
        cfg = self.quick_cfg()
        ecfg = evaluation.EvalConfig(seed=2)
        runs = evaluation.ablation_suite(split, uf, itf, cfg, ecfg)
        standalone = evaluation.train_and_evaluate(split, uf, itf, cfg, ecfg)
        assert runs[0].reports["cold_users"].metric_row() == \
            standalone.reports["cold_users"].metric_row()

    def test_lr_sweep_rows(self, fixture_split):
        split, uf, itf = fixture_split
        rows = evaluation.lr_sweep(split, uf, itf, self.quick_cfg(epochs=1),
                                   evaluation.EvalConfig(seed=2))
        assert [r.lr for r in rows] == [0.001, 0.005, 0.01, 0.05, 0.1]
        for r in rows:
            assert not r.diverged
            assert np.isfinite(r.final_train_loss)
