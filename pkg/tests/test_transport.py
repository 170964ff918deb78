"""Triangular maps, reference sampling, monotonicity and conditional sampling."""

import numpy as np
import pytest
from scipy.stats import kstest

from mgan import nn
from mgan.errors import ConfigurationError, ContractError, ShapeError
from mgan.oracles import AnalyticConditional, KrTransportMap
from mgan.transport import (
    BlockTriangularMap,
    FullyTriangularMap,
    ReferenceSampler,
    Standardizer,
    apply_map,
    build_block_map,
    build_triangular_map,
    conditional_sample,
    joint_sample,
    load_map,
    map_checksum,
    monotonicity_penalty,
    monotonicity_probability,
    push_forward,
    sample_reference,
    save_map,
)

KS_LEVEL = 0.01


class _ScaledIdentity:
    """F(x, y) = sign * y"""

    def __init__(self, n, m, sign):
        self.n, self.m, self.sign = n, m, sign

    def transform(self, batch):
        return self.sign * batch[:, self.n:]


class TestBlockTriangularMap:
    def test_x_block_passes_through(self, rng):
        T = build_block_map(2, 3, [8, 8], seed=1)
        w = rng.standard_normal((10, 5))
        out = apply_map(T, w)
        np.testing.assert_array_equal(out[:, :2], w[:, :2])
        assert out.shape == (10, 5)

    def test_network_dimensions_checked(self):
        with pytest.raises(ShapeError):
            BlockTriangularMap(2, 3, nn.init_network([4, 8, 3], rng_seed=0))

    def test_wrong_batch_width(self):
        T = build_block_map(1, 1, [4], seed=0)
        with pytest.raises(ShapeError):
            T.transform(np.zeros((3, 3)))

    def test_copy_is_independent(self):
        T = build_block_map(1, 1, [4], seed=0)
        clone = T.copy()
        clone.network.weights[0][:] = 0.0
        assert not np.all(T.network.weights[0] == 0.0)


class TestFullyTriangularMap:
    """Component i only sees x and the first i+1 ordered variables"""

    @pytest.mark.parametrize('reverse', [False, True])
    def test_triangular_dependence(self, rng, reverse):
        T = build_triangular_map(1, 3, [6, 6], seed=3, reverse=reverse)
        w = rng.standard_normal((4, 4))
        base = T.transform(w)
        for i in range(3):
            for j in range(i + 1, 3):
                moved = w.copy()
                moved[:, 1 + T.order[j]] += 1.0
                np.testing.assert_array_equal(T.transform(moved)[:, T.order[i]], base[:, T.order[i]])

    def test_reverse_order(self):
        T = build_triangular_map(0, 3, [4], seed=0, reverse=True)
        assert T.order == [2, 1, 0]
        assert [c.input_dim for c in T.components] == [1, 2, 3]

    def test_order_must_be_permutation(self):
        comps = [nn.init_network([1, 2, 1], rng_seed=0), nn.init_network([2, 2, 1], rng_seed=1)]
        with pytest.raises(ConfigurationError):
            FullyTriangularMap(0, 2, comps, order=[0, 0])


class TestReferenceSampler:
    def test_x_resampled_from_data(self, rng):
        x = np.array([[1.0], [2.0], [3.0]])
        batch = sample_reference(ReferenceSampler(x, 2, rng), 500)
        assert batch.shape == (500, 3)
        assert set(np.unique(batch[:, 0])) <= {1.0, 2.0, 3.0}

    def test_gaussian_block(self, rng):
        batch = ReferenceSampler(np.zeros((5, 1)), 1, rng).sample(20_000)
        assert abs(batch[:, 1].mean()) < 5 / np.sqrt(20_000)
        assert batch[:, 1].var() == pytest.approx(1.0, abs=0.05)

    def test_empty_data_rejected(self, rng):
        with pytest.raises(ConfigurationError):
            ReferenceSampler(np.zeros((0, 1)), 1, rng)

    def test_batch_size_positive(self, rng):
        with pytest.raises(ContractError):
            ReferenceSampler(np.zeros((5, 1)), 1, rng).sample(0)


class TestMonotonicity:
    def test_identity_is_always_monotone(self, rng):
        sampler = ReferenceSampler(rng.standard_normal((50, 1)), 2, rng)
        assert monotonicity_probability(_ScaledIdentity(1, 2, 1.0), sampler, 1000) == 1.0

    def test_negated_identity_is_never_monotone(self, rng):
        sampler = ReferenceSampler(np.zeros((50, 0)), 2, rng)
        assert monotonicity_probability(_ScaledIdentity(0, 2, -1.0), sampler, 1000) == 0.0

    def test_penalty_of_identity_is_mean_squared_distance(self, rng):
        w, wp = rng.standard_normal((30, 3)), rng.standard_normal((30, 3))
        expected = np.mean(np.sum((w - wp) ** 2, axis=1))
        assert monotonicity_penalty(_ScaledIdentity(1, 2, 1.0), w, wp) == pytest.approx(expected)

    def test_negating_the_map_negates_the_penalty(self, rng):
        w, wp = rng.standard_normal((40, 3)), rng.standard_normal((40, 3))
        expected = -np.mean(np.sum((w - wp) ** 2, axis=1))
        negated = monotonicity_penalty(_ScaledIdentity(0, 3, -1.0), w, wp)
        assert negated == pytest.approx(expected)
        assert negated == -monotonicity_penalty(_ScaledIdentity(0, 3, 1.0), w, wp)

    def test_paired_batches_must_match(self, rng):
        with pytest.raises(ContractError):
            monotonicity_penalty(_ScaledIdentity(1, 1, 1.0), np.zeros((3, 2)), np.zeros((4, 2)))


class TestConditionalSampling:
    """Sampling through the analytic KR maps reproduces the analytic conditionals"""

    @pytest.mark.parametrize(('problem', 'x'), [
        (problem, x) for problem in (4, 5, 6) for x in (-2.0, 0.0, 2.0) if (problem, x) != (6, 0.0)
    ])
    def test_ks_against_analytic_conditional(self, problem, x):
        seed = problem if x != 0.0 else 9
        samples = conditional_sample(KrTransportMap(problem), [x], 10_000, np.random.default_rng(seed))
        conditional = AnalyticConditional(problem)
        result = kstest(samples[:, 0], lambda y: conditional.cdf(y, x))
        assert result.pvalue > KS_LEVEL

    def test_problem_6_origin_is_point_mass(self):
        samples = conditional_sample(KrTransportMap(6), [0.0], 1000, np.random.default_rng(0))
        assert np.all(samples == 0.0)

    def test_constant_map_gives_identical_samples(self, rng):
        T = build_block_map(1, 2, [4], seed=0)
        for W in T.network.weights:
            W[:] = 0.0
        T.network.biases[-1][:] = [1.5, -0.5]
        samples = conditional_sample(T, [0.3], 50, rng)
        np.testing.assert_array_equal(samples, np.tile([1.5, -0.5], (50, 1)))

    def test_identity_map_gives_standard_normal(self):
        samples = conditional_sample(_ScaledIdentity(1, 2, 1.0), [0.7], 10_000, np.random.default_rng(4))
        np.testing.assert_allclose(samples.mean(axis=0), 0.0, atol=0.05)
        np.testing.assert_allclose(samples.std(axis=0), 1.0, atol=0.05)

    def test_x_star_length_checked(self, rng):
        with pytest.raises(ShapeError):
            conditional_sample(KrTransportMap(4), [0.0, 1.0], 10, rng)

    def test_banana_shaped_map_with_empty_x(self, rng):
        T = build_block_map(0, 2, [4], seed=0)
        assert conditional_sample(T, np.zeros(0), 7, rng).shape == (7, 2)
        assert joint_sample(T, np.zeros((7, 0)), rng).shape == (7, 2)


class TestStandardizer:
    def test_roundtrip_and_constant_columns(self, rng):
        x = rng.normal(5.0, 2.0, size=(100, 2))
        x[:, 1] = 3.0
        y = rng.normal(-1.0, 0.5, size=(100, 1))
        scaler = Standardizer.fit(x, y)
        assert scaler.x_std[1] == 1.0
        np.testing.assert_allclose(scaler.inverse_y(scaler.transform_y(y)), y)
        np.testing.assert_allclose(scaler.transform_y(y).std(), 1.0)

    def test_push_forward_works_in_data_coordinates(self, rng):
        T = build_block_map(1, 1, [4], seed=2)
        T.scaler = Standardizer(np.array([10.0]), np.array([2.0]), np.array([-3.0]), np.array([4.0]))
        x, u = np.array([[12.0]]), np.array([[0.5]])
        raw = T.transform(np.array([[1.0, 0.5]]))
        np.testing.assert_allclose(push_forward(T, x, u), raw * 4.0 - 3.0)


class TestPersistence:
    @pytest.mark.parametrize('kind', ['block', 'triangular'])
    def test_save_and_load(self, tmp_path, rng, kind):
        if kind == 'block':
            T = build_block_map(2, 2, [5], seed=1)
        else:
            T = build_triangular_map(2, 2, [5], seed=1, reverse=True)
        T.scaler = Standardizer.fit(rng.standard_normal((20, 2)), rng.standard_normal((20, 2)))
        save_map(T, tmp_path / 'map')
        loaded = load_map(tmp_path / 'map')
        w = rng.standard_normal((6, 4))
        np.testing.assert_array_equal(loaded.transform(w), T.transform(w))
        assert loaded.kind == kind
        np.testing.assert_array_equal(loaded.scaler.y_mean, T.scaler.y_mean)
        assert map_checksum(tmp_path / 'map') == map_checksum(tmp_path / 'map')
