import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_instance
from linabs.abstraction import AbstractionMap, brute_force_consistency, check_block_abstraction, exogenous_map
from linabs.concretize import (
    MIN_EXOGENOUS_COEF,
    ConcretizeConfig,
    default_blocks,
    sample_concretization,
    sample_inner_block,
)
from linabs.errors import InvalidAbstraction, ResampleExhausted
from linabs.scm import LinearScm, make_rng, topological_order


class TestInnerBlock:
    def test_single_variable(self):
        w = sample_inner_block(np.array([1.5]), ConcretizeConfig(), make_rng(0))
        assert w.shape == (1, 1) and w[0, 0] == 0.0

    def test_two_by_two_closed_form(self):
        # Irrelevant X0 must reach the relevant X1, so the only edge is forced.
        w = sample_inner_block(np.array([0.0, 1.0]), ConcretizeConfig(inner_edge_prob=0.0), make_rng(1))
        assert w[0, 1] != 0.0
        s = np.linalg.solve(np.eye(2) - w, [0.0, 1.0])
        assert np.allclose(s, [w[0, 1], 1.0])

    def test_concretization_class_block(self):
        w = np.array([[0.0, 1.0], [0.0, 0.0]])
        s = np.linalg.solve(np.eye(2) - w, [1.0, 1.0])
        assert np.array_equal(s, [2.0, 1.0])

    def test_relevant_descendant_and_min_coefficient(self):
        rng = make_rng(2)
        for _ in range(50):
            n = int(rng.integers(2, 8))
            n_irr = int(rng.integers(0, n))
            t = np.r_[np.zeros(n_irr), rng.uniform(0.5, 2.0, n - n_irr)]
            w = sample_inner_block(t, ConcretizeConfig(inner_edge_prob=0.3), rng)
            assert not np.any(np.tril(w))
            reach = np.linalg.matrix_power(np.eye(n) + (w != 0), n) > 0
            for k in range(n_irr):
                assert reach[k, n_irr:].any()
            s = np.linalg.solve(np.eye(n) - w, t)
            assert np.all(np.abs(s) >= MIN_EXOGENOUS_COEF)

    def test_ordering_precondition(self):
        with pytest.raises(ValueError):
            sample_inner_block(np.array([1.0, 0.0]), ConcretizeConfig(), make_rng(0))

    def test_exhausted(self):
        # With zero-mean, zero-spread weights the forced edge is 0 and s[0] stays 0.
        cfg = ConcretizeConfig(inner_weight_std=0.0, max_resample=3)
        with pytest.raises(ResampleExhausted):
            sample_inner_block(np.array([0.0, 1.0]), cfg, make_rng(0))


class TestSampleConcretization:
    def test_single_abstract_variable(self):
        m = LinearScm(np.zeros((1, 1)))
        t = AbstractionMap(np.array([[1.0], [-0.7], [2.0]]))
        l = sample_concretization(m, t, ConcretizeConfig(rng_seed=4))
        assert check_block_abstraction(l, m, t).ok

    def test_concretization_class_barycenter(self, concretization_class):
        _, h, t = concretization_class
        l = sample_concretization(h, t, ConcretizeConfig(barycenter=True, inner_edge_prob=0.0, rng_seed=0))
        w = l.weights
        # s2 = [1, 1] (no inner edge in block 2), so every row of W12 is t1_k * [0.5, 0.5].
        assert np.allclose(w[:2, 2:], 0.5)
        s = exogenous_map(l, t).matrix_s
        assert np.allclose(w[:2, 2:] @ s[2:, 1], t.matrix_t[:2, 0])

    def test_rows_are_simplex_right_inverses(self):
        for seed in range(20):
            l, m, t, layout = random_instance(seed)
            s = exogenous_map(l, t).matrix_s
            tm = t.matrix_t
            for i in range(t.b):
                for j in range(t.b):
                    if i == j or m.weights[i, j] == 0:
                        continue
                    bj = layout.blocks[j]
                    for k in np.flatnonzero(tm[:, i]):
                        c = l.weights[k, bj] / (m.weights[i, j] * tm[k, i])
                        assert c @ s[bj, j] == pytest.approx(1.0, abs=1e-12)

    def test_zero_abstract_edge_gives_zero_cross_block(self):
        for seed in range(10):
            l, m, t, layout = random_instance(seed)
            for i in range(t.b):
                for j in range(t.b):
                    if i != j and m.weights[i, j] == 0:
                        assert not l.weights[np.ix_(layout.blocks[i], layout.blocks[j])].any()

    def test_ignored_variables_are_sinks_of_blocks(self):
        for seed in range(10):
            l, m, t, layout = random_instance(seed, ignored_range=(2, 4))
            ign = layout.ignored
            assert not l.weights[ign, :].any()

    def test_default_blocks(self):
        t = AbstractionMap(np.array([[1.0, 0], [0, 0], [0, 1.0]]))
        blocks, ignored = default_blocks(t)
        assert [list(b) for b in blocks] == [[0], [2]] and list(ignored) == [1]

    def test_invalid_abstraction(self):
        m = LinearScm(np.zeros((2, 2)))
        with pytest.raises(InvalidAbstraction):
            sample_concretization(m, AbstractionMap(np.array([[1.0, 2.0], [2.0, 4.0]])))
        with pytest.raises(InvalidAbstraction):
            sample_concretization(m, AbstractionMap(np.eye(3)[:, :3]))

    @given(st.integers(0, 100_000))
    @settings(max_examples=40, deadline=None)
    def test_soundness(self, seed):
        l, m, t, _ = random_instance(seed)
        assert check_block_abstraction(l, m, t).ok
        assert brute_force_consistency(l, m, t) <= 1e-8

    def test_deterministic(self):
        m = LinearScm(np.array([[0.0, 1.2], [0.0, 0.0]]))
        t = AbstractionMap(np.array([[1.0, 0], [0.5, 0], [0, 1.0], [0, -1.0]]))
        a = sample_concretization(m, t, ConcretizeConfig(rng_seed=9))
        b = sample_concretization(m, t, ConcretizeConfig(rng_seed=9))
        assert a == b
        assert list(topological_order(a))  # acyclic
