import numpy as np
import pytest

from linabs.abstraction import transitive_closure
from linabs.discovery import DiscoveryConfig, PriorKnowledge, direct_lingam
from linabs.errors import DimensionMismatch, PipelineStageError
from linabs.evaluate import pk_scores, t_support_metrics
from linabs.pipeline import (
    PipelineConfig,
    TStrategy,
    abs_lingam,
    abs_lingam_oracle,
    abstract_dataset,
    derive_constraints,
    discover_abstract,
    fit_abstraction,
)
from linabs.scenario import ScenarioConfig, generate
from linabs.scm import LinearScm, is_dag, make_rng, simulate

SMALL = dict(b=3, abstract_edges=2, block_size_range=(2, 4), n_concrete_samples=4000, n_joint_samples=60)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            PipelineConfig(t_threshold=-1.0)
        with pytest.raises(ValueError):
            PipelineConfig(abstract_edge_vote=0.0)
        with pytest.raises(ValueError):
            PipelineConfig(t_strategy="Top2")

    def test_dict_round_trip(self):
        cfg = PipelineConfig(t_strategy=TStrategy.TOP1, n_bootstrap=3, discovery=DiscoveryConfig(prune_threshold=0.1))
        assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError):
            PipelineConfig.from_dict({"bogus": 1})


class TestFitAbstraction:
    def test_noiseless_support_exact(self):
        for seed in range(5):
            sc = generate(ScenarioConfig(**SMALL, seed=seed))
            fitted = fit_abstraction(sc.d_j_x, sc.d_j_y)
            m = t_support_metrics(fitted.t_hat, sc.observed_t(), align=False)
            assert m["f1"] == 1.0 and m["nhd"] == 0.0
            assert not fitted.overlap_resolved

    def test_recovers_matrix_up_to_scaling(self):
        # Oracle: with standardized columns the true map becomes diag(sd_x) T diag(1/sd_y).
        sc = generate(ScenarioConfig(**SMALL, seed=1))
        t_obs = sc.observed_t().matrix_t
        expected = sc.scales["concrete_std"][:, None] * t_obs / sc.scales["abstract_std"][None, :]
        fitted = fit_abstraction(sc.d_j_x, sc.d_j_y)
        assert np.allclose(fitted.t_hat.matrix_t, expected, atol=1e-8)

    def test_top1_strategies(self):
        rng = make_rng(0)
        x = rng.normal(size=(200, 4))
        t = np.array([[1.0, 0.3], [0.0, 1.0], [0.8, 0.0], [0.0, 0.5]])
        y = x @ t
        plain = fit_abstraction(x, y, PipelineConfig(t_strategy="Plain"))
        assert plain.overlap_resolved
        assert [list(s) for s in plain.relevant_sets] == [[0, 2], [1, 3]]
        top1 = fit_abstraction(x, y, PipelineConfig(t_strategy="Top1"))
        assert top1.t_hat.matrix_t[0, 1] == 0.0 and top1.t_hat.matrix_t[0, 0] == pytest.approx(1.0)
        refit = fit_abstraction(x, y, PipelineConfig(t_strategy="Top1Refit"))
        # Oracle: per-column least squares on the selected rows.
        xc = x - x.mean(axis=0)
        yc = y - y.mean(axis=0)
        coef, *_ = np.linalg.lstsq(xc[:, [1, 3]], yc[:, 1], rcond=None)
        assert np.allclose(refit.t_hat.matrix_t[[1, 3], 1], coef)
        assert refit.t_hat.matrix_t[0, 1] == 0.0

    def test_intercept_ignored(self):
        rng = make_rng(2)
        x = rng.normal(size=(50, 3))
        t = np.array([[1.0], [0.0], [2.0]])
        a = fit_abstraction(x, x @ t)
        b = fit_abstraction(x + 5.0, x @ t - 3.0)
        assert np.allclose(a.t_hat.matrix_t, b.t_hat.matrix_t)

    def test_mismatched_rows(self):
        with pytest.raises(DimensionMismatch):
            fit_abstraction(np.zeros((5, 3)), np.ones((4, 2)))

    def test_underdetermined_warns(self):
        rng = make_rng(3)
        x = rng.normal(size=(4, 6))
        with pytest.warns(RuntimeWarning):
            fit_abstraction(x, x[:, :2])


class TestAbstractDataset:
    def test_row_by_row(self):
        rng = make_rng(4)
        x = rng.normal(size=(7, 5))
        t = rng.normal(size=(5, 2))
        out = abstract_dataset(x, t)
        for r in range(7):
            assert np.allclose(out[r], [sum(x[r, k] * t[k, j] for k in range(5)) for j in range(2)])

    def test_zero_map(self):
        assert not abstract_dataset(np.ones((3, 4)), np.zeros((4, 2))).any()

    def test_shape_error(self):
        with pytest.raises(DimensionMismatch):
            abstract_dataset(np.ones((3, 4)), np.zeros((3, 2)))


class TestDeriveConstraints:
    relevant = [[0, 1], [2], [3, 4]]

    def test_complete_dag_forbids_only_backwards(self):
        m = np.triu(np.ones((3, 3)), k=1)
        k = derive_constraints(m, self.relevant, 5)
        expected = {(a, b) for j in range(3) for i in range(j) for a in self.relevant[j] for b in self.relevant[i]}
        assert set(k.forbidden_paths) == expected

    def test_empty_graph_forbids_all_cross_pairs(self):
        k = derive_constraints(np.zeros((3, 3)), self.relevant, 5)
        assert len(k) == 2 * (2 * 1 + 2 * 2 + 1 * 2)
        assert not any(a in s and b in s for a, b in k.forbidden_paths for s in map(set, self.relevant))

    def test_matches_scenario_truth(self):
        for seed in range(5):
            sc = generate(ScenarioConfig(**SMALL, seed=seed))
            k = derive_constraints(sc.observed_m(), sc.observed_relevant_sets(), sc.d)
            assert k.forbidden_paths == sc.observed_k_true()

    def test_size_mismatch(self):
        with pytest.raises(DimensionMismatch):
            derive_constraints(np.zeros((2, 2)), self.relevant, 5)


class TestDiscoverAbstract:
    def test_full_vote_is_intersection(self):
        w = np.zeros((3, 3))
        w[0, 1] = 1.0
        w[1, 2] = -0.8
        y = simulate(LinearScm(w), 3000, 0)
        cfg = PipelineConfig(n_bootstrap=4, abstract_edge_vote=1.0)
        m, info = discover_abstract(y, cfg)
        # Oracle: replay the same subsamples and intersect the supports.
        rng = make_rng(cfg.discovery.rng_seed)
        supports = []
        for _ in range(4):
            rows = np.sort(rng.choice(3000, size=1500, replace=False))
            supports.append(direct_lingam(y[rows]).weights != 0)
        assert np.array_equal(m.weights != 0, np.logical_and.reduce(supports))
        assert is_dag(m.weights)

    def test_zero_columns_dropped(self):
        y = simulate(LinearScm(np.array([[0.0, 1.0], [0.0, 0.0]])), 1000, 1)
        y = np.column_stack([y, np.zeros(1000)])
        m, info = discover_abstract(y)
        assert info["dropped"] == [2]
        assert not m.weights[2].any() and not m.weights[:, 2].any()


class TestAbsLingam:
    def test_empty_knowledge_matches_plain(self):
        # A single abstract variable yields no constraints.
        sc = generate(ScenarioConfig(b=1, abstract_edges=0, block_size_range=(3, 5), n_concrete_samples=3000,
                                     n_joint_samples=30, seed=0))
        res = abs_lingam(sc.d_l, sc.d_j_x, sc.d_j_y)
        assert len(res.knowledge) == 0
        plain = direct_lingam(sc.d_l)
        assert np.array_equal(res.w_hat.weights, plain.weights)
        assert res.concrete.order == plain.order

    def test_oracle_precision(self):
        for seed in range(5):
            sc = generate(ScenarioConfig(**SMALL, seed=seed))
            res = abs_lingam_oracle(sc.d_l, sc.observed_m(), sc.observed_relevant_sets())
            p, r = pk_scores(res.knowledge.forbidden_paths, sc.observed_k_true())
            assert p == 1.0 and r == 1.0
            reach = transitive_closure(res.w_hat.weights != 0)
            assert not any(reach[a, b] for a, b in res.knowledge.forbidden_paths)

    def test_end_to_end(self):
        sc = generate(ScenarioConfig(**SMALL, seed=3))
        res = abs_lingam(sc.d_l, sc.d_j_x, sc.d_j_y)
        p, _ = pk_scores(res.knowledge.forbidden_paths, sc.observed_k_true())
        assert p == 1.0
        assert set(res.report.timings) == {
            "fit_abstraction", "abstract_dataset", "abstract_discovery", "constraints", "concrete_discovery", "total",
        }
        assert res.report.pair_evals_concrete <= direct_lingam(sc.d_l).pair_evals

    def test_deterministic(self):
        sc = generate(ScenarioConfig(**SMALL, seed=4))
        cfg = PipelineConfig(n_bootstrap=3)
        a = abs_lingam(sc.d_l, sc.d_j_x, sc.d_j_y, cfg)
        b = abs_lingam(sc.d_l, sc.d_j_x, sc.d_j_y, cfg)
        assert np.array_equal(a.w_hat.weights, b.w_hat.weights)
        assert a.knowledge == b.knowledge

    def test_stage_error_names_stage(self):
        x = make_rng(0).normal(size=(20, 3))
        with pytest.raises(PipelineStageError) as err:
            abs_lingam(x, x[:5], np.zeros((5, 2)))
        assert err.value.stage == "fit_abstraction"

    def test_column_mismatch(self):
        with pytest.raises(DimensionMismatch):
            abs_lingam(np.zeros((10, 3)), np.zeros((5, 4)), np.zeros((5, 1)))

    def test_knowledge_type(self):
        sc = generate(ScenarioConfig(**SMALL, seed=5))
        res = abs_lingam(sc.d_l, sc.d_j_x, sc.d_j_y)
        assert isinstance(res.knowledge, PriorKnowledge) and res.knowledge.n_vars == sc.d
