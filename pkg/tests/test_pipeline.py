import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings
from hypothesis import strategies as st

from snpevo.estimators import RegressorSpec, SelectorSpec
from snpevo.evolution import process_snps
from snpevo.pipeline import (D_MAX_GRID, R2_THRESHOLD_GRID, LdParams, Pipeline, bh_adjust,
                             build_ld_groups, conditional_analysis, evaluate, ld_node,
                             prune_pairwise, squared_correlations, wald_pvalue)

from oracles import bh_step_up

PASS = SelectorSpec("VarianceThreshold", {"threshold": 0.0})
OLS = RegressorSpec("Linear", {})


class TestGrids:
    def test_values(self):
        assert R2_THRESHOLD_GRID == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
        assert D_MAX_GRID == (500_000, 600_000, 700_000, 800_000, 900_000, 1_000_000)

    def test_off_grid_rejected(self):
        with pytest.raises(ValueError):
            LdParams(0.81, 500_000)

    @given(st.integers(0, 2**32 - 1))
    def test_shift_stays_on_grid(self, seed):
        rng = np.random.default_rng(seed)
        p = LdParams.random(rng)
        for _ in range(5):
            p = p.shifted(rng)
        assert p.r2_threshold in R2_THRESHOLD_GRID and p.d_max in D_MAX_GRID

    def test_pipeline_rejects_duplicate_snps(self):
        with pytest.raises(ValueError):
            Pipeline((1, 1), None, PASS, OLS)


class TestLdGroups:
    def test_chaining_and_chromosome_break(self):
        chrom = np.array([1, 1, 1, 1, 2, 2])
        pos = np.array([0, 400_000, 800_000, 2_000_000, 100, 200])
        groups = build_ld_groups(range(6), chrom, pos, 500_000)
        assert [g.members for g in groups] == [(0, 1, 2), (3,), (4, 5)]
        assert [g.chromosome for g in groups] == [1, 1, 2]

    def test_gap_equal_to_dmax_chains(self):
        chrom = np.ones(2, int)
        pos = np.array([0, 500_000])
        assert len(build_ld_groups([0, 1], chrom, pos, 500_000)) == 1
        assert len(build_ld_groups([0, 1], chrom, np.array([0, 500_001]), 500_000)) == 2

    def test_order_independent(self):
        chrom = np.array([2, 1, 1])
        pos = np.array([5, 10, 1])
        groups = build_ld_groups([0, 1, 2], chrom, pos, 500_000)
        assert [g.members for g in groups] == [(2, 1), (0,)]

    @given(st.lists(st.tuples(st.integers(1, 3), st.integers(0, 5_000_000)), min_size=1,
                    max_size=40))
    def test_partition(self, coords):
        chrom = np.array([c for c, _ in coords])
        pos = np.array([p for _, p in coords])
        groups = build_ld_groups(range(len(coords)), chrom, pos, 500_000)
        flat = [m for g in groups for m in g.members]
        assert sorted(flat) == list(range(len(coords)))
        for g in groups:
            assert len({chrom[m] for m in g.members}) == 1
            ps = [pos[m] for m in g.members]
            assert ps == sorted(ps)
            assert all(b - a <= 500_000 for a, b in zip(ps, ps[1:]))


class TestPrune:
    def test_three_identical_keeps_strongest(self):
        x = np.array([0, 1, 2, 1, 0, 2, 1, 1], float)
        G = np.column_stack([x, x, x])
        assert prune_pairwise([10, 11, 12], G, [0.05, 0.03, 0.04], 0.8) == [10]
        assert prune_pairwise([10, 11, 12], G, [0.03, 0.05, 0.04], 0.8) == [11]

    def test_tie_keeps_upstream(self):
        x = np.array([0, 1, 2, 1, 0, 2], float)
        assert prune_pairwise([3, 4], np.column_stack([x, x]), [0.1, 0.1], 0.5) == [3]

    def test_uncorrelated_untouched(self):
        G = np.array([[0, 0], [0, 2], [2, 0], [2, 2]], float)
        assert prune_pairwise([0, 1], G, [0.1, 0.2], 0.5) == [0, 1]

    @settings(max_examples=40)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(R2_THRESHOLD_GRID))
    def test_post_prune_pairs_below_threshold(self, seed, thr):
        rng = np.random.default_rng(seed)
        base = rng.integers(0, 3, 60)
        G = np.column_stack([np.where(rng.random(60) < rng.uniform(0, 0.5), rng.integers(0, 3, 60),
                                      base) for _ in range(8)]).astype(float)
        kept = prune_pairwise(list(range(8)), G, rng.random(8), thr)
        r2 = squared_correlations(G[:, kept])
        off = r2[~np.eye(len(kept), dtype=bool)]
        assert np.all(off <= thr + 1e-12)


class TestBh:
    def test_example(self):
        np.testing.assert_allclose(bh_adjust([0.01, 0.02, 0.04]), [0.03, 0.03, 0.04])

    def test_capped_and_empty(self):
        assert bh_adjust([0.9, 0.95]).max() <= 1.0
        assert bh_adjust([]).size == 0

    @settings(max_examples=100)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
    def test_matches_direct_definition(self, p):
        np.testing.assert_allclose(bh_adjust(p), bh_step_up(p), rtol=1e-12, atol=1e-15)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
    def test_monotone_and_dominates_raw(self, p):
        adj = bh_adjust(p)
        order = np.argsort(p, kind="stable")
        assert np.all(np.diff(adj[order]) >= -1e-15)
        assert np.all(adj >= np.asarray(p) - 1e-15)


class TestWald:
    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.integers(8, 80))
    def test_matches_ols_oracle(self, seed, n):
        rng = np.random.default_rng(seed)
        x, a = rng.integers(0, 3, n).astype(float), rng.integers(0, 3, n).astype(float)
        y = 0.3 * x + a + rng.normal(size=n)
        p = wald_pvalue(x, a, y)
        X = np.column_stack([np.ones(n), x, a])
        if np.linalg.matrix_rank(X) < 3:
            assert p is None
            return
        ref = sm.OLS(y, X).fit().pvalues[1]
        assert p == pytest.approx(ref, rel=1e-9, abs=1e-12)

    def test_collinear_discarded(self):
        a = np.array([0, 1, 2, 1, 0, 2, 2, 1], float)
        y = np.arange(8.0)
        assert wald_pvalue(2 * a + 1, a, y) is None
        assert wald_pvalue(np.ones(8), a, y) is None
        assert wald_pvalue(a[:3], a[:3], y[:3]) is None

    def test_conditional_keeps_anchor_and_independent(self):
        rng = np.random.default_rng(1)
        n = 400
        a = rng.integers(0, 3, n).astype(float)
        b = rng.integers(0, 3, n).astype(float)
        noise = rng.integers(0, 3, n).astype(float)
        y = a + 0.8 * b + rng.normal(size=n)
        X = np.column_stack([noise, a, b])
        kept = conditional_analysis([7, 8, 9], X, y, [0.0, 0.3, 0.2])
        assert kept == [8, 9]

    def test_conditional_collinear_member_discarded(self):
        a = np.array([0, 1, 2, 1, 0, 2, 2, 1, 0, 1], float)
        X = np.column_stack([a, a])
        assert conditional_analysis([1, 2], X, a + 0.1, [0.5, 0.4]) == [1]


class TestEvaluate:
    def _run(self, prepared, snps, ld=None, sel=PASS, reg=OLS):
        data, db = prepared
        p = Pipeline(tuple(snps), ld, sel, reg, seed=1)
        process_snps([p], db, data)
        return evaluate(p, data, db.snapshot()), db

    def test_partition_of_input(self, prepared):
        snps = list(range(0, 120, 3))
        res, db = self._run(prepared, snps, LdParams(0.5, 500_000),
                            SelectorSpec("SelectPercentile", {"percentile": 50}))
        parts = [res.dropped, res.pruned, res.selector_removed, res.survivors]
        assert frozenset().union(*parts) == frozenset(snps)
        assert sum(len(x) for x in parts) == len(snps)
        assert res.complexity == len(res.survivors)

    def test_success_scores_validation(self, prepared):
        data, _ = prepared
        res, db = self._run(prepared, [8, 9, 10, 11, 59])
        assert not res.failed and 0 <= res.r2 <= 1
        assert res.model is not None
        assert res.objectives == (res.r2, res.complexity)

    def test_unconsidered_dropped(self, prepared):
        data, db = prepared
        p = Pipeline((9, 59), None, PASS, OLS)
        process_snps([p], db, data)
        db.considered[59] = False
        res = evaluate(p, data, db.snapshot())
        assert res.dropped == {59} and res.survivors == {9}

    def test_nothing_considered_fails(self, prepared):
        data, db = prepared
        p = Pipeline((40,), None, PASS, OLS)
        process_snps([p], db, data)
        db.considered[:] = False
        res = evaluate(p, data, db.snapshot())
        assert res.failed and res.r2 == -np.inf and res.complexity == 0

    def test_empty_selection_fails(self, prepared):
        res, _ = self._run(prepared, [8, 9],
                           sel=SelectorSpec("VarianceThreshold", {"threshold": 10.0}))
        assert res.failed and res.reason.startswith("no SNPs")
        assert res.selector_removed == {8, 9}

    def test_deterministic(self, prepared):
        spec = RegressorSpec("RandomForest", {"max_depth": 3, "n_trees": 50})
        a, _ = self._run(prepared, range(30, 60), LdParams(0.8, 500_000), reg=spec)
        b, _ = self._run(prepared, range(30, 60), LdParams(0.8, 500_000), reg=spec)
        assert a.r2 == b.r2 and a.survivors == b.survivors

    def test_ld_node_subset(self, prepared):
        data, db = prepared
        p = Pipeline(tuple(range(120)), None, PASS, OLS)
        process_snps([p], db, data)
        out = ld_node(range(120), data, db.snapshot(), LdParams(0.5, 500_000))
        assert set(out) <= set(range(120)) and out
