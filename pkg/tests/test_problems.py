"""Dataset generators, the BOD model and the Darcy solver."""

import numpy as np
import pytest

from mgan.errors import ConfigurationError, DomainError, NumericalError
from mgan.problems import (
    BOD_TIMES,
    DARCY_A_RANGE,
    DARCY_B_RANGE,
    DarcyGrid,
    JointDataset,
    bod_forward,
    bod_parameters,
    darcy_observe,
    darcy_operator,
    darcy_solve,
    gen_darcy,
    generate,
)

# -div grad p = 1 on the unit square, p = 0 on the boundary
POISSON_CENTRE = 0.0736713532


class TestSyntheticGenerators:
    def test_shapes_and_range(self):
        dataset = generate('synthetic-5', 1000, seed=0)
        assert (dataset.n, dataset.m, len(dataset)) == (1, 1, 1000)
        assert np.all(np.abs(dataset.x) <= 3.0)
        assert np.all(np.abs(dataset.y) < 1.0)

    def test_additive_gamma_moments(self):
        dataset = generate('synthetic-4', 100_000, seed=1)
        assert dataset.y.mean() == pytest.approx(0.3, abs=0.01)
        assert np.all(dataset.y[:, 0] >= np.tanh(dataset.x[:, 0]))

    def test_multiplicative_noise_sign(self):
        dataset = generate('synthetic-6', 10_000, seed=2)
        assert np.all(dataset.y[:, 0] * dataset.x[:, 0] >= 0.0)
        assert abs(dataset.y.mean()) < 0.02

    def test_same_seed_same_data(self):
        a, b = generate('synthetic-4', 50, seed=9), generate('synthetic-4', 50, seed=9)
        np.testing.assert_array_equal(a.as_matrix(), b.as_matrix())
        assert a.seed == 9

    @pytest.mark.parametrize('problem', ['synthetic-7', 'synthetic-x', 'swiss-roll'])
    def test_unknown_problem(self, problem):
        with pytest.raises(ConfigurationError):
            generate(problem, 10, seed=0)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigurationError):
            generate('banana', 0, seed=0)


class TestBanana:
    def test_moments(self):
        dataset = generate('banana', 100_000, seed=3)
        assert dataset.n == 0
        y1, y2 = dataset.y[:, 0], dataset.y[:, 1]
        assert y1.mean() == pytest.approx(0.0, abs=0.02)
        assert y1.var() == pytest.approx(1.0, abs=0.02)
        assert y2.mean() == pytest.approx(2.0, abs=0.02)
        assert y2.var() == pytest.approx(2.25, abs=0.1)

    def test_reverse_order_swaps_columns(self):
        forward = generate('banana', 100, seed=4)
        reverse = generate('banana', 100, seed=4, params={'reverse_order': True})
        np.testing.assert_array_equal(reverse.y, forward.y[:, ::-1])
        assert reverse.params['reverse_order'] is True


class TestBod:
    def test_prior_transform_at_origin(self):
        A, B = bod_parameters(np.zeros(2))
        assert (A, B) == pytest.approx((0.8, 0.16))

    def test_noiseless_forward(self):
        x = bod_forward(np.zeros(2))
        assert x[0] == pytest.approx(0.8 * (1.0 - np.exp(-0.16)))
        assert x[0] == pytest.approx(0.118285, abs=1e-6)
        assert x.shape == (len(BOD_TIMES),)

    def test_parameter_ranges(self):
        A, B = bod_parameters(np.random.default_rng(0).standard_normal((1000, 2)) * 5.0)
        assert np.all((A >= 0.4) & (A <= 1.2))
        assert np.all((B >= 0.01) & (B <= 0.31))

    def test_noise_needs_rng(self):
        with pytest.raises(ConfigurationError):
            bod_forward(np.zeros(2), noisy=True)

    def test_dataset_noise_level(self):
        dataset = generate('bod', 20_000, seed=5)
        residual = dataset.x - bod_forward(dataset.y)
        assert residual.var() == pytest.approx(1e-3, rel=0.05)
        assert (dataset.n, dataset.m) == (5, 2)


class TestDarcySolver:
    def test_constant_permeability_matches_poisson(self):
        grid = DarcyGrid(interior_points=63, solver='direct')
        pressure = darcy_solve(4.0, 4.0, grid)
        assert pressure[31, 31] == pytest.approx(POISSON_CENTRE / 4.0, rel=1e-3)

    def test_scaling_identity(self):
        grid = DarcyGrid(interior_points=15, solver='direct')
        np.testing.assert_allclose(darcy_solve(6.0, 24.0, grid) * 2.0, darcy_solve(3.0, 12.0, grid), rtol=1e-10)

    def test_operator_is_symmetric(self):
        matrix = darcy_operator(3.0, 14.0, DarcyGrid(interior_points=9))
        assert abs(matrix - matrix.T).max() < 1e-9

    def test_cg_agrees_with_direct(self):
        cg = darcy_solve(3.5, 13.0, DarcyGrid(interior_points=15))
        direct = darcy_solve(3.5, 13.0, DarcyGrid(interior_points=15, solver='direct'))
        np.testing.assert_allclose(cg, direct, rtol=1e-7)

    def test_refinement_converges(self):
        centre = {G: darcy_solve(4.0, 14.0, DarcyGrid(interior_points=G, solver='direct'))[G // 2, G // 2]
                  for G in (31, 63, 127)}
        assert abs(centre[63] - centre[127]) < abs(centre[31] - centre[127])
        assert abs(centre[63] - centre[127]) / centre[127] < 0.01

    def test_second_order_convergence(self):
        error = {G: abs(darcy_solve(1.0, 1.0, DarcyGrid(interior_points=G, solver='direct'))[G // 2, G // 2]
                        - POISSON_CENTRE) for G in (31, 63)}
        assert 3.5 < error[31] / error[63] < 4.5

    def test_inclusion_lowers_pressure(self):
        grid = DarcyGrid(interior_points=31, solver='direct')
        assert darcy_solve(4.0, 14.0, grid)[15, 15] < darcy_solve(4.0, 4.0, grid)[15, 15]

    def test_non_positive_permeability(self):
        with pytest.raises(DomainError):
            darcy_solve(-1.0, 12.0, DarcyGrid(interior_points=7))

    def test_cg_iteration_cap(self):
        with pytest.raises(NumericalError) as excinfo:
            darcy_solve(3.0, 12.0, DarcyGrid(interior_points=15, max_iterations=1))
        assert excinfo.value.residual > 0

    def test_invalid_solver(self):
        with pytest.raises(ConfigurationError):
            DarcyGrid(solver='multigrid')


class TestDarcyObservations:
    def test_sixteen_observations(self):
        grid = DarcyGrid(interior_points=15, solver='direct')
        x = darcy_observe(darcy_solve(3.0, 12.0, grid), grid)
        assert x.shape == (16,)
        assert np.all(x > 0)

    def test_observation_point_on_boundary(self):
        grid = DarcyGrid(interior_points=7, observation_points=[(0.0, 0.5)])
        with pytest.raises(ConfigurationError):
            grid.observation_indices()

    def test_wrong_pressure_shape(self):
        with pytest.raises(ConfigurationError):
            darcy_observe(np.zeros((3, 3)), DarcyGrid(interior_points=7))

    def test_noise_needs_rng(self):
        grid = DarcyGrid(interior_points=7)
        with pytest.raises(ConfigurationError):
            darcy_observe(np.zeros((7, 7)), grid, noisy=True)

    def test_generated_dataset(self, monkeypatch):
        monkeypatch.setenv('MGAN_THREADS', '2')
        dataset = gen_darcy(4, np.random.default_rng(0), DarcyGrid(interior_points=15))
        assert dataset.x.shape == (4, 16)
        assert np.all((dataset.y[:, 0] >= DARCY_A_RANGE[0]) & (dataset.y[:, 0] <= DARCY_A_RANGE[1]))
        assert np.all((dataset.y[:, 1] >= DARCY_B_RANGE[0]) & (dataset.y[:, 1] <= DARCY_B_RANGE[1]))
        assert dataset.params == {'interior_points': 15}


class TestJointDataset:
    @pytest.mark.parametrize('fmt', ['csv', 'binary'])
    def test_save_and_load(self, tmp_path, fmt):
        dataset = generate('bod', 30, seed=1)
        if fmt == 'csv':
            loaded = JointDataset.load_csv(dataset.save_csv(tmp_path / 'd.csv'), 'bod')
        else:
            loaded = JointDataset.load_binary(dataset.save_binary(tmp_path / 'd.bin'), 'bod')
        np.testing.assert_array_equal(loaded.x, dataset.x)
        np.testing.assert_array_equal(loaded.y, dataset.y)

    def test_banana_csv_has_no_x_columns(self, tmp_path):
        dataset = generate('banana', 10, seed=1)
        loaded = JointDataset.load_csv(dataset.save_csv(tmp_path / 'b.csv'), 'banana')
        assert loaded.n == 0
        assert dataset.columns() == ['y1', 'y2']

    def test_truncated_binary(self, tmp_path):
        path = generate('synthetic-4', 10, seed=1).save_binary(tmp_path / 'd.bin')
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ConfigurationError):
            JointDataset.load_binary(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'd.bin'
        path.write_bytes(b'NOPE' + bytes(40))
        with pytest.raises(ConfigurationError):
            JointDataset.load_binary(path)

    def test_non_finite_rows_rejected(self):
        with pytest.raises(ConfigurationError):
            JointDataset(np.array([[0.0]]), np.array([[np.nan]]), 'synthetic-4')
