"""End-to-end stage runs through the command-line entry point."""

import json
from dataclasses import replace

import numpy as np
import pytest

from cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, main
from mgan.artifacts import LOCK_NAME, read_json, read_matrix_csv
from mgan.metrics import DensityGrid, kde_density, kl_grid
from mgan.oracles import KrTransportMap, true_joint_density
from mgan.pipeline import _evaluate_synthetic
from mgan.problems import JointDataset, gen_synthetic


def _metrics(path):
    lines = path.read_text().splitlines()
    assert lines[0] == 'metric,label,value,std,scale'
    return [line.split(',') for line in lines[1:]]


class TestSyntheticPipeline:
    def test_all_stages(self, tiny_experiment, write_config, tmp_path):
        config = str(write_config(tiny_experiment))
        run = tmp_path / 'run'

        assert main(['generate', '--config', config]) == EXIT_OK
        assert (run / 'data' / 'dataset.csv').exists()
        manifest = read_json(run / 'data' / 'manifest.json')
        assert manifest['stage'] == 'generate'
        assert manifest['dataset']['N'] == 200

        assert main(['train', '--config', config]) == EXIT_OK
        assert (run / 'train' / 'map.json').exists()
        assert (run / 'train' / 'checkpoints' / 'epoch_0002.json').exists()
        assert 0.0 <= read_json(run / 'train' / 'manifest.json')['final_mono_prob'] <= 1.0

        assert main(['evaluate', '--config', config]) == EXIT_OK
        rows = _metrics(run / 'eval' / 'metrics.csv')
        assert [row[0] for row in rows] == ['kl', 'relative_l2', 'mono_prob']
        assert rows[0][4] == '1000'
        assert rows[1][4] == '10'
        assert float(rows[0][2]) >= 0.0
        _, joint, _ = read_matrix_csv(run / 'eval' / 'samples_joint.csv')
        assert joint.shape == (500, 2)
        _, curves, comments = read_matrix_csv(run / 'eval' / 'samples_conditional.csv')
        assert curves.shape == (3 * 200, 2)
        final_sha = read_json(run / 'eval' / 'manifest.json')['checkpoint_sha256'][-1]
        assert comments == ['x_star=[[-2.0], [0.0], [2.0]]', f'checkpoint_sha256={final_sha}']

        assert main(['kr-oracle', '--config', config, '--resolution', '11']) == EXIT_OK
        columns, grid, _ = read_matrix_csv(run / 'kr-oracle' / 'kr_grid.csv')
        assert columns == ['x', 'u', 'kr', 'learned', 'abs_error', 'degenerate']
        assert grid.shape == (121, 6)
        assert read_json(run / 'kr-oracle' / 'manifest.json')['learned'] == 'block'
        assert not (run / LOCK_NAME).exists()

    def test_regeneration_is_byte_identical(self, tiny_experiment, write_config, tmp_path):
        config = str(write_config(tiny_experiment))
        assert main(['generate', '--config', config, '--out', str(tmp_path / 'a')]) == EXIT_OK
        assert main(['generate', '--config', config, '--out', str(tmp_path / 'b')]) == EXIT_OK
        assert main(['generate', '--config', config, '--out', str(tmp_path / 'c'), '--seed', '99']) == EXIT_OK
        first = (tmp_path / 'a' / 'data' / 'dataset.csv').read_bytes()
        assert first == (tmp_path / 'b' / 'data' / 'dataset.csv').read_bytes()
        assert first != (tmp_path / 'c' / 'data' / 'dataset.csv').read_bytes()

    def test_kr_oracle_without_training(self, tiny_experiment, write_config, tmp_path):
        config = str(write_config(tiny_experiment))
        assert main(['kr-oracle', '--config', config, '--resolution', '5']) == EXIT_OK
        _, grid, _ = read_matrix_csv(tmp_path / 'run' / 'kr-oracle' / 'kr_grid.csv')
        np.testing.assert_array_equal(grid[:, 4], 0.0)
        columns, pdf, _ = read_matrix_csv(tmp_path / 'run' / 'kr-oracle' / 'conditional_pdf.csv')
        assert columns == ['x', 'y', 'pdf', 'degenerate']
        assert pdf.shape == (3 * 701, 4)

    def test_preset_source(self, tmp_path):
        assert main(['generate', '--preset', 'synthetic-5', '--out', str(tmp_path / 'p')]) == EXIT_OK
        assert read_json(tmp_path / 'p' / 'data' / 'manifest.json')['dataset']['N'] == 50_000


class TestOracleSelfCheck:
    """Analytic-map samples scored against the analytic density leave only KDE bias"""

    def test_analytic_map_scores_like_direct_samples(self, tiny_experiment, tmp_path):
        evaluation = replace(tiny_experiment.evaluation, test_samples=4000, num_samples=100, grid_resolution=60)
        config = replace(tiny_experiment, problem='synthetic-5', evaluation=evaluation)
        rows = _evaluate_synthetic(config, [KrTransportMap(5)], np.random.default_rng(0), tmp_path)
        kl_oracle = next(row.value for row in rows if row.metric == 'kl')

        # same reference draw as the evaluation above, then an independent direct sample
        reference = gen_synthetic(5, 4000, np.random.default_rng(0))
        grid = DensityGrid.around(reference.as_matrix(), 60)
        truth = grid.evaluate(lambda pts: true_joint_density(5, pts[:, 0], pts[:, 1]))
        direct = gen_synthetic(5, 4000, np.random.default_rng(1)).as_matrix()
        kl_direct = kl_grid(truth, kde_density(direct, evaluation.kde, grid))
        assert kl_oracle == pytest.approx(kl_direct, rel=0.25)

        rows = _evaluate_synthetic(config, [KrTransportMap(4)], np.random.default_rng(0), tmp_path)
        kl_mismatched = next(row.value for row in rows if row.metric == 'kl')
        assert kl_mismatched > 2.0 * kl_oracle


class TestPosteriorPipeline:
    def test_bod_stages(self, tiny_bod_experiment, write_config, tmp_path):
        config = str(write_config(tiny_bod_experiment))
        for stage in ('generate', 'train', 'mcmc', 'evaluate'):
            assert main([stage, '--config', config]) == EXIT_OK, stage
        run = tmp_path / 'bod'
        _, chain, comments = read_matrix_csv(run / 'mcmc' / 'chain_0.csv')
        assert chain.shape == (500, 2)
        assert comments[0].startswith('x_star=')
        rows = _metrics(run / 'eval' / 'metrics.csv')
        metrics = [row[0] for row in rows]
        assert metrics[:3] == ['kl', 'relative_l2', 'mmd']
        assert metrics[-1] == 'mono_prob'
        labels = {row[1] for row in rows if row[0] == 'kurtosis'}
        assert labels == {'x*0:mgan:y1', 'x*0:mgan:y2', 'x*0:mcmc:y1', 'x*0:mcmc:y2'}
        columns, samples, comments = read_matrix_csv(run / 'eval' / 'samples_xstar0.csv')
        assert samples.shape == (300, 2)
        assert columns == ['y1', 'y2']
        assert json.loads(comments[0].split('=', 1)[1]) == [0.18, 0.32, 0.42, 0.49, 0.54]
        final_sha = read_json(run / 'eval' / 'manifest.json')['checkpoint_sha256'][-1]
        assert comments[1] == f'checkpoint_sha256={final_sha}'
        assert len(final_sha) == 64

    def test_evaluate_without_reference(self, tiny_bod_experiment, write_config):
        config = str(write_config(tiny_bod_experiment))
        assert main(['generate', '--config', config]) == EXIT_OK
        assert main(['train', '--config', config]) == EXIT_OK
        assert main(['evaluate', '--config', config]) == EXIT_CONFIG

    def test_mcmc_needs_a_posterior_problem(self, tiny_experiment, write_config):
        assert main(['mcmc', '--config', str(write_config(tiny_experiment))]) == EXIT_CONFIG


class TestExitCodes:
    def test_unknown_config_key(self, tiny_experiment, write_config):
        payload = tiny_experiment.to_dict()
        payload['train']['momentum'] = 0.9
        assert main(['generate', '--config', str(write_config(payload))]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(['generate', '--config', str(tmp_path / 'nope.json')]) == EXIT_CONFIG

    def test_locked_directory(self, tiny_experiment, write_config, tmp_path):
        (tmp_path / 'run').mkdir()
        (tmp_path / 'run' / LOCK_NAME).write_text('1234')
        assert main(['generate', '--config', str(write_config(tiny_experiment))]) == EXIT_CONFIG

    def test_missing_dataset(self, tiny_experiment, write_config):
        assert main(['train', '--config', str(write_config(tiny_experiment))]) == EXIT_IO

    def test_non_finite_training(self, tiny_experiment, write_config, tmp_path):
        rng = np.random.default_rng(0)
        huge = JointDataset(rng.uniform(size=(100, 1)) * 1e200, rng.uniform(size=(100, 1)) * 1e200, 'synthetic-4')
        (tmp_path / 'run' / 'data').mkdir(parents=True)
        huge.save_csv(tmp_path / 'run' / 'data' / 'dataset.csv')
        assert main(['train', '--config', str(write_config(tiny_experiment))]) == EXIT_NUMERICAL
        assert not (tmp_path / 'run' / LOCK_NAME).exists()

    def test_dimension_mismatch(self, tiny_experiment, tiny_bod_experiment, write_config, tmp_path):
        bod_config = str(write_config(tiny_bod_experiment, 'bod.json'))
        assert main(['generate', '--config', bod_config]) == EXIT_OK
        synthetic = str(write_config(tiny_experiment))
        dataset = str(tmp_path / 'bod' / 'data' / 'dataset.csv')
        assert main(['train', '--config', synthetic, '--dataset', dataset]) == EXIT_CONFIG

    def test_source_is_required(self):
        with pytest.raises(SystemExit):
            main(['generate'])
