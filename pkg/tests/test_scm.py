import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import series_inverse, unfaithful_example
from linabs.errors import IndexOutOfRange, NotADag, NotBlockTriangular, ShapeMismatch
from linabs.scm import (
    Intervention,
    LinearScm,
    NoiseSpec,
    apply_intervention,
    blockwise_reduced_form,
    make_rng,
    reduced_form,
    simulate,
    topological_order,
)


def random_dag(rng, n, p=0.5):
    w = np.triu(rng.normal(size=(n, n)) * (rng.random((n, n)) < p), k=1)
    perm = rng.permutation(n)
    return w[np.ix_(perm, perm)]


class TestNoiseSpec:
    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            NoiseSpec.exponential(0.0)
        with pytest.raises(ValueError):
            NoiseSpec.uniform(1.0, 1.0)
        with pytest.raises(ValueError):
            NoiseSpec.gaussian(0.0, -1.0)

    def test_moments(self):
        rng = make_rng(0)
        for spec in (NoiseSpec.exponential(2.0), NoiseSpec.uniform(-1, 3), NoiseSpec.gaussian(1.0, 4.0)):
            x = spec.sample(rng, 200_000)
            assert abs(x.mean() - spec.mean) < 0.02 * max(1.0, abs(spec.mean))
            assert abs(x.var() - spec.variance) < 0.03 * spec.variance

    def test_dict_round_trip(self):
        spec = NoiseSpec.uniform(-0.5, 2.5)
        assert NoiseSpec.from_dict(spec.to_dict()) == spec


class TestLinearScm:
    def test_rejects_cycle_and_diagonal(self):
        with pytest.raises(NotADag):
            LinearScm(np.array([[0.0, 1.0], [1.0, 0.0]]))
        with pytest.raises(ValueError):
            LinearScm(np.eye(2))

    def test_json_round_trip_exact(self):
        rng = make_rng(3)
        scm = LinearScm(random_dag(rng, 6), (NoiseSpec.uniform(-1, 1),) * 6)
        text = scm.to_json()
        back = LinearScm.from_json(text)
        assert back == scm
        assert np.array_equal(back.weights, scm.weights)
        payload = json.loads(text)
        assert payload["n_vars"] == 6 and len(payload["weights"]) == 36

    def test_weights_read_only(self):
        scm = LinearScm(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            scm.weights[0, 1] = 1.0


class TestTopologicalOrder:
    def test_empty_graph_index_order(self):
        assert list(topological_order(np.zeros((3, 3)))) == [0, 1, 2]

    def test_small_chain(self):
        w = np.zeros((3, 3))
        w[2, 0] = 1.0
        w[0, 1] = 1.0
        assert list(topological_order(w)) == [2, 0, 1]

    def test_unfaithful_example_order(self):
        l, _, _ = unfaithful_example()
        order = list(topological_order(l))
        assert order[0] == 0 and order[-1] == 4

    def test_cycle(self):
        w = np.zeros((3, 3))
        w[0, 1] = w[1, 2] = w[2, 0] = 1.0
        with pytest.raises(NotADag):
            topological_order(w)

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_edges_point_forward(self, seed):
        w = random_dag(make_rng(seed), 8)
        pos = np.empty(8, dtype=int)
        pos[topological_order(w)] = np.arange(8)
        src, dst = np.nonzero(w)
        assert np.all(pos[src] < pos[dst])


class TestReducedForm:
    def test_empty_graph(self):
        assert np.array_equal(reduced_form(np.zeros((3, 3))), np.eye(3))

    def test_single_edge(self):
        w = np.array([[0.0, 2.5], [0.0, 0.0]])
        assert np.allclose(reduced_form(w), [[1.0, 2.5], [0.0, 1.0]])

    def test_unfaithful_example_cancellation(self):
        l, _, _ = unfaithful_example()
        f = reduced_form(l)
        oracle = series_inverse(l.weights)
        assert np.allclose(f, oracle, atol=1e-12)
        assert f[0, 3] == pytest.approx(0.0, abs=1e-12)
        assert f[0, 4] == pytest.approx(1.0)

    @pytest.mark.parametrize("method", ["triangular", "lu"])
    def test_inverse_identity(self, method):
        rng = make_rng(11)
        for _ in range(20):
            w = random_dag(rng, 12)
            f = reduced_form(w, method)
            assert np.allclose(f @ (np.eye(12) - w), np.eye(12), atol=1e-10)
            assert np.allclose(f, series_inverse(w), atol=1e-8)


class TestInterventions:
    def test_empty_is_fixed_point(self):
        scm = LinearScm(np.array([[0.0, 1.0], [0.0, 0.0]]))
        assert apply_intervention(scm, Intervention({})) is scm

    def test_out_of_range(self):
        scm = LinearScm(np.zeros((2, 2)))
        with pytest.raises(IndexOutOfRange):
            apply_intervention(scm, Intervention({5: 1.0}))

    def test_chain_cut(self):
        w = np.zeros((3, 3))
        w[0, 1] = 2.0
        w[1, 2] = 3.0
        scm = LinearScm(w)
        cut = apply_intervention(scm, Intervention({1: 0.7}))
        assert cut.weights[0, 1] == 0.0 and cut.weights[1, 2] == 3.0
        x = simulate(scm, 500, 4, Intervention({1: 0.7}))
        e2 = simulate(LinearScm(np.zeros((3, 3))), 500, 4)[:, 2]
        assert np.allclose(x[:, 2], 3.0 * 0.7 + e2)

    def test_unfaithful_example_cut_mediator(self):
        l, _, _ = unfaithful_example()
        cut = apply_intervention(l, Intervention({3: 0.0}))
        f = reduced_form(cut)
        assert np.allclose(f, series_inverse(cut.weights))
        assert f[0, 4] == pytest.approx(1.0)


class TestSimulate:
    def test_deterministic(self):
        scm = LinearScm(random_dag(make_rng(0), 5))
        assert np.array_equal(simulate(scm, 100, 7), simulate(scm, 100, 7))

    def test_empty_intervention_matches_none(self):
        scm = LinearScm(random_dag(make_rng(1), 5))
        assert np.array_equal(simulate(scm, 50, 2), simulate(scm, 50, 2, Intervention({})))

    def test_independent_gaussian_columns(self):
        n = 20_000
        x = simulate(LinearScm(np.zeros((3, 3)), (NoiseSpec.gaussian(),) * 3), n, 5)
        assert np.all(np.abs(x.mean(axis=0)) < 4 / np.sqrt(n))

    def test_restriction_property(self):
        scm = LinearScm(random_dag(make_rng(2), 6))
        x = simulate(scm, 200, 3, Intervention({1: -2.0, 4: 0.5}))
        assert np.all(x[:, 1] == -2.0) and np.all(x[:, 4] == 0.5)

    def test_parent_fixed_by_intervention(self):
        scm = LinearScm(np.array([[0.0, 2.0], [0.0, 0.0]]), (NoiseSpec.gaussian(0, 0), NoiseSpec.exponential()))
        x = simulate(scm, 100, 9, Intervention({0: 1.0}))
        e = simulate(LinearScm(np.zeros((2, 2)), scm.noise), 100, 9)
        assert np.allclose(x[:, 1], 2.0 + e[:, 1])

    def test_covariance_matches_closed_form(self):
        w = np.zeros((3, 3))
        w[0, 1] = 0.8
        w[1, 2] = -1.2
        scm = LinearScm(w)
        x = simulate(scm, 100_000, 13)
        f = reduced_form(scm)
        expected = f.T @ f  # Exponential(1) noise has unit variance
        assert np.allclose(np.cov(x.T), expected, rtol=0.05, atol=0.03)


class TestBlockwiseReducedForm:
    def test_zero_cross_block(self):
        w = np.zeros((4, 4))
        w[0, 1] = 1.0
        w[2, 3] = -1.0
        dec = blockwise_reduced_form(w, [2, 2])
        assert np.array_equal(dec.off_diag[0, 1], np.zeros((2, 2)))

    def test_adjacent_blocks_have_no_remainder(self):
        rng = make_rng(5)
        w = np.triu(rng.normal(size=(4, 4)), k=1)
        dec = blockwise_reduced_form(w, [2, 2])
        assert np.array_equal(dec.remainder[0, 1], np.zeros((2, 2)))
        expected = dec.diag[0] @ w[:2, 2:] @ dec.diag[1]
        assert np.allclose(dec.off_diag[0, 1], expected)

    def test_three_blocks_match_dense_inverse(self):
        rng = make_rng(2024)
        w = np.triu(rng.normal(size=(6, 6)), k=1)
        dec = blockwise_reduced_form(w, [2, 2, 2])
        assert np.allclose(dec.assemble(), np.linalg.inv(np.eye(6) - w), atol=1e-10)

    def test_permuted_labels(self):
        rng = make_rng(8)
        w = np.triu(rng.normal(size=(7, 7)), k=1)
        perm = rng.permutation(7)
        inv = np.argsort(perm)
        wl = w[np.ix_(inv, inv)]  # original variable perm[c] sits at block position c
        dec = blockwise_reduced_form(wl, [3, 4], order=perm)
        assert np.allclose(dec.assemble(), np.linalg.inv(np.eye(7) - wl), atol=1e-10)

    def test_errors(self):
        w = np.zeros((3, 3))
        with pytest.raises(ShapeMismatch):
            blockwise_reduced_form(w, [1, 1])
        w[2, 0] = 1.0
        with pytest.raises(NotBlockTriangular):
            blockwise_reduced_form(w, [1, 2])
