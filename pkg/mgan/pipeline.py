"""Experiment stages: generate, train, mcmc, evaluate and kr-oracle.

Every stage writes into its own subdirectory of the experiment directory and
leaves a ``manifest.json`` carrying the full config, so any stage can be
re-run from its manifest alone::

    <out>/data/       dataset.csv | dataset.bin
    <out>/train/      map.json + map.F*.mgan, discriminator.mgan, history.csv,
                      checkpoints/epoch_NNNN.*
    <out>/mcmc/       chain_<i>.csv (one per conditioning point)
    <out>/eval/       metrics.csv, samples_*.csv
    <out>/kr-oracle/  kr_grid.csv, conditional_pdf.csv
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mgan.artifacts import (
    MetricRow,
    experiment_lock,
    file_sha256,
    read_matrix_csv,
    write_manifest,
    write_matrix_csv,
    write_metric_report,
)
from mgan.config import ExperimentConfig
from mgan.errors import ConfigurationError
from mgan.metrics import (
    DensityGrid,
    kde_density,
    kl_grid,
    mmd,
    relative_l2,
    sample_moments,
    summarize,
)
from mgan.nn import save_network
from mgan.oracles import (
    AnalyticConditional,
    KrTransportMap,
    McmcConfig,
    banana_density,
    bod_log_posterior,
    darcy_log_posterior,
    degenerate_mask,
    kr_map_error_grid,
    mcmc_sample,
    synthetic_id,
    true_joint_density,
    tune_proposal,
)
from mgan.problems import (
    BOD_X_STAR,
    DARCY_A_RANGE,
    DARCY_B_RANGE,
    DARCY_TEST_TRUTHS,
    DarcyGrid,
    JointDataset,
    darcy_observe,
    darcy_solve,
    gen_banana,
    gen_synthetic,
    generate,
)
from mgan.trainer import TrainingResult, train
from mgan.transport import conditional_sample, joint_sample, load_map, map_checksum, save_map

logger = logging.getLogger(__name__)

PROBLEM_DIMENSIONS = {
    'synthetic-4': (1, 1),
    'synthetic-5': (1, 1),
    'synthetic-6': (1, 1),
    'banana': (0, 2),
    'bod': (5, 2),
    'darcy': (16, 2),
}
POSTERIOR_PROBLEMS = ('bod', 'darcy')
CONDITIONAL_CURVE_POINTS = (-2.0, 0.0, 2.0)
KL_SCALE = {'synthetic-4': 1e3, 'synthetic-5': 1e3, 'synthetic-6': 1e3, 'bod': 1e3}
L2_SCALE = {'synthetic-4': 10.0, 'synthetic-5': 10.0, 'synthetic-6': 10.0}
DEFAULT_PROPOSAL = {'bod': [0.3, 0.5], 'darcy': [0.05, 0.1]}
MOMENT_NAMES = ('mean', 'variance', 'skewness', 'kurtosis')


@dataclass
class ExperimentPaths:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def data(self) -> Path:
        return self.root / 'data'

    @property
    def train(self) -> Path:
        return self.root / 'train'

    @property
    def mcmc(self) -> Path:
        return self.root / 'mcmc'

    @property
    def eval(self) -> Path:
        return self.root / 'eval'

    @property
    def kr_oracle(self) -> Path:
        return self.root / 'kr-oracle'

    def dataset_file(self, fmt: str = 'csv') -> Path:
        return self.data / ('dataset.bin' if fmt == 'binary' else 'dataset.csv')


def _paths(config: ExperimentConfig, out) -> ExperimentPaths:
    return ExperimentPaths(out if out is not None else config.output_dir)


def darcy_grid(config: ExperimentConfig) -> DarcyGrid:
    return DarcyGrid(interior_points=config.dataset.interior_points)


def load_dataset(path, config: ExperimentConfig) -> JointDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f'dataset {path} does not exist; run generate first')
    if path.suffix == '.bin':
        return JointDataset.load_binary(path, config.problem, config.dataset.seed)
    return JointDataset.load_csv(path, config.problem, config.dataset.seed)


def conditioning_points(config: ExperimentConfig) -> np.ndarray:
    """The x* rows evaluated for ``config.problem``; deterministic given the config."""
    n = PROBLEM_DIMENSIONS[config.problem][0]
    if config.evaluation.x_star:
        points = np.asarray(config.evaluation.x_star, dtype=np.float64).reshape(-1, n)
    elif config.problem == 'bod':
        points = np.asarray([BOD_X_STAR])
    elif config.problem == 'darcy':
        grid = darcy_grid(config)
        rng = np.random.default_rng(config.evaluation.seed)
        points = np.vstack([
            darcy_observe(darcy_solve(A, B, grid), grid, rng, noisy=True) for A, B in DARCY_TEST_TRUTHS
        ])
    elif config.problem == 'banana':
        points = np.zeros((1, 0))
    else:
        points = np.asarray(CONDITIONAL_CURVE_POINTS)[:, None]
    return points


# ----------------------------------------------------------------------
# generate
# ----------------------------------------------------------------------
def cmd_generate(config: ExperimentConfig, out=None) -> Path:
    paths = _paths(config, out)
    with experiment_lock(paths.root):
        dataset = generate(
            config.problem,
            config.dataset.N,
            config.dataset.seed,
            config.dataset.generator_params(config.problem),
        )
        target = paths.dataset_file(config.dataset.format)
        target.parent.mkdir(parents=True, exist_ok=True)
        if config.dataset.format == 'binary':
            dataset.save_binary(target)
        else:
            dataset.save_csv(target)
        write_manifest(paths.data, 'generate', {
            'config': config.to_dict(),
            'dataset': dataset.manifest(),
            'file': target.name,
            'sha256': file_sha256(target),
        })
    logger.info('wrote %s (%d rows)', target, len(dataset))
    return target


# ----------------------------------------------------------------------
# train
# ----------------------------------------------------------------------
def checkpoint_stems(train_dir) -> list[Path]:
    """Saved per-epoch map stems, oldest first."""
    train_dir = Path(train_dir)
    return sorted(p.with_suffix('') for p in (train_dir / 'checkpoints').glob('epoch_*.json'))


def cmd_train(config: ExperimentConfig, dataset_path=None, out=None, progress: bool = False) -> TrainingResult:
    paths = _paths(config, out)
    dataset_path = Path(dataset_path) if dataset_path is not None else paths.dataset_file(config.dataset.format)
    dataset = load_dataset(dataset_path, config)
    expected = PROBLEM_DIMENSIONS[config.problem]
    if (dataset.n, dataset.m) != expected:
        raise ConfigurationError(
            f'{dataset_path} has (n, m) = ({dataset.n}, {dataset.m}) but {config.problem} expects {expected}'
        )

    with experiment_lock(paths.root):
        result = train(config.train, dataset, progress=progress)
        paths.train.mkdir(parents=True, exist_ok=True)
        save_map(result.transport_map, paths.train / 'map')
        save_network(result.discriminator, paths.train / 'discriminator.mgan')
        for snapshot in result.snapshots:
            save_map(snapshot.transport_map, paths.train / 'checkpoints' / f'epoch_{snapshot.epoch:04d}')
        result.history.to_csv(paths.train / 'history.csv')
        final = result.history.records[-1]
        write_manifest(paths.train, 'train', {
            'config': config.to_dict(),
            'dataset': str(dataset_path),
            'dataset_sha256': file_sha256(dataset_path),
            'run': result.history.run_label,
            'lambda': config.train.lam,
            'generator_updates': result.history.generator_updates,
            'critic_updates': result.history.critic_updates,
            'snapshot_epochs': [s.epoch for s in result.snapshots],
            'final_mono_prob': final.mono_prob,
            'map_sha256': map_checksum(paths.train / 'map'),
        })
    logger.info('%s run finished: final monotonicity probability %.4f', result.history.run_label, final.mono_prob)
    return result


# ----------------------------------------------------------------------
# mcmc
# ----------------------------------------------------------------------
def _log_posterior(config: ExperimentConfig, x_star: np.ndarray):
    if config.problem == 'bod':
        return lambda rho: bod_log_posterior(rho, x_star)
    grid = darcy_grid(config)
    return lambda params: darcy_log_posterior(params, x_star, grid)


def _initial_state(problem: str) -> np.ndarray:
    if problem == 'bod':
        return np.zeros(2)
    return np.array([np.mean(DARCY_A_RANGE), np.mean(DARCY_B_RANGE)])


def cmd_mcmc(config: ExperimentConfig, out=None) -> list[Path]:
    if config.problem not in POSTERIOR_PROBLEMS:
        raise ConfigurationError(f'no posterior to sample for {config.problem!r}; expected one of {POSTERIOR_PROBLEMS}')
    paths = _paths(config, out)
    settings = config.evaluation.mcmc
    written, records = [], []
    with experiment_lock(paths.root):
        for i, x_star in enumerate(conditioning_points(config)):
            log_posterior = _log_posterior(config, x_star)
            state = _initial_state(config.problem)
            std = np.asarray(settings.proposal_std or DEFAULT_PROPOSAL[config.problem], dtype=np.float64)
            if settings.tune:
                std, state = tune_proposal(log_posterior, state, std, seed=settings.seed)
            result = mcmc_sample(McmcConfig(
                log_posterior, state, std, settings.chain_length, settings.burn_in, settings.seed + i,
            ))
            target = write_matrix_csv(
                paths.mcmc / f'chain_{i}.csv',
                result.chain,
                ['y1', 'y2'],
                [f'x_star={json.dumps(x_star.tolist())}', f'acceptance_rate={result.acceptance_rate:.6f}'],
            )
            written.append(target)
            records.append({
                'file': target.name,
                'x_star': x_star.tolist(),
                'acceptance_rate': result.acceptance_rate,
                'proposal_std': result.proposal_std.tolist(),
                'seed': settings.seed + i,
            })
        write_manifest(paths.mcmc, 'mcmc', {'config': config.to_dict(), 'chains': records})
    return written


def load_chain(path, x_star: np.ndarray) -> np.ndarray:
    """Read a chain and check it was sampled at ``x_star``."""
    _, chain, comments = read_matrix_csv(path)
    stored = [c.split('=', 1)[1] for c in comments if c.startswith('x_star=')]
    if stored and not np.allclose(json.loads(stored[0]), x_star):
        raise ConfigurationError(f'{path} was sampled at a different x*; re-run mcmc with this config')
    return chain


# ----------------------------------------------------------------------
# evaluate
# ----------------------------------------------------------------------
def _load_maps(train_dir: Path) -> tuple[list[Path], list]:
    stems = checkpoint_stems(train_dir) or [train_dir / 'map']
    if not (stems[0].parent / f'{stems[0].name}.json').exists():
        raise FileNotFoundError(f'no checkpoints under {train_dir}; run train first')
    return stems, [load_map(stem) for stem in stems]


def _sample_comments(x_star, checksum: str) -> list[str]:
    """Header lines tying a sample dump to its conditioning point and checkpoint."""
    return [f'x_star={json.dumps(x_star)}', f'checkpoint_sha256={checksum}']


def _summary_row(metric: str, values, label: str, scale: float = 1.0) -> MetricRow:
    summary = summarize(values)
    return MetricRow(metric, summary.mean, summary.std, scale, label)


def _evaluate_synthetic(config: ExperimentConfig, maps, rng, eval_dir: Path, checksum: str = '') -> list[MetricRow]:
    problem = config.problem
    pid = synthetic_id(problem)
    evaluation = config.evaluation
    reference = gen_synthetic(pid, evaluation.test_samples, rng)
    grid = DensityGrid.around(reference.as_matrix(), evaluation.grid_resolution)
    truth = grid.evaluate(lambda pts: true_joint_density(pid, pts[:, 0], pts[:, 1]))

    kl_values, l2_values = [], []
    for T in maps:
        samples = joint_sample(T, reference.x, rng)
        estimate = kde_density(samples, evaluation.kde, grid)
        kl_values.append(kl_grid(truth, estimate))
        l2_values.append(relative_l2(estimate, truth))

    write_matrix_csv(eval_dir / 'samples_joint.csv', samples, ['x1', 'y1'])
    final = maps[-1]
    curves = np.vstack([
        np.column_stack([np.full(evaluation.num_samples, x), conditional_sample(final, [x], evaluation.num_samples, rng)])
        for x in CONDITIONAL_CURVE_POINTS
    ])
    write_matrix_csv(
        eval_dir / 'samples_conditional.csv', curves, ['x1', 'y1'],
        _sample_comments([[x] for x in CONDITIONAL_CURVE_POINTS], checksum),
    )

    rows = []
    if 'kl' in evaluation.metrics:
        rows.append(_summary_row('kl', kl_values, 'joint', KL_SCALE[problem]))
    if 'relative_l2' in evaluation.metrics:
        rows.append(_summary_row('relative_l2', l2_values, 'joint', L2_SCALE[problem]))
    return rows


def _evaluate_banana(config: ExperimentConfig, maps, rng, eval_dir: Path, checksum: str = '') -> list[MetricRow]:
    evaluation = config.evaluation
    reference = gen_banana(evaluation.test_samples, rng).y
    grid = DensityGrid.around(reference, evaluation.grid_resolution)
    truth = grid.evaluate(banana_density)

    kl_values, l2_values = [], []
    for T in maps:
        samples = joint_sample(T, np.zeros((evaluation.test_samples, 0)), rng)
        if config.dataset.reverse_order:
            samples = samples[:, ::-1]
        estimate = kde_density(samples, evaluation.kde, grid)
        kl_values.append(kl_grid(truth, estimate))
        l2_values.append(relative_l2(estimate, truth))
    write_matrix_csv(eval_dir / 'samples_banana.csv', samples, ['y1', 'y2'], _sample_comments([], checksum))

    rows = []
    label = f'{config.train.map_kind}:{"reverse" if config.dataset.reverse_order else "favorable"}'
    if 'kl' in evaluation.metrics:
        summary = summarize(kl_values)
        rows.append(MetricRow('kl', summary.mean, summary.std, 1.0, label))
        rows.append(MetricRow('kl_error_95', summary.error_95, 0.0, 1.0, label))
    if 'relative_l2' in evaluation.metrics:
        rows.append(_summary_row('relative_l2', l2_values, label))
    return rows


def _thin(rows: np.ndarray, count: int) -> np.ndarray:
    if rows.shape[0] <= count:
        return rows
    return rows[np.linspace(0, rows.shape[0] - 1, count).astype(int)]


def _moment_rows(moments_list, label: str) -> list[MetricRow]:
    rows = []
    for name in MOMENT_NAMES:
        per_column = np.array([getattr(mo, name) for mo in moments_list])
        for column in range(per_column.shape[1]):
            rows.append(_summary_row(name, per_column[:, column], f'{label}:y{column + 1}'))
    return rows


def _evaluate_posterior(
    config: ExperimentConfig, maps, rng, eval_dir: Path, reference_dir: Path, checksum: str = '',
) -> list[MetricRow]:
    evaluation = config.evaluation
    rows = []
    for i, x_star in enumerate(conditioning_points(config)):
        chain_path = reference_dir / f'chain_{i}.csv'
        if not chain_path.exists():
            raise ConfigurationError(f'no MCMC reference at {chain_path}; run mcmc for this config first')
        chain = load_chain(chain_path, x_star)
        label = f'x*{i}'
        grid = DensityGrid.around(chain, evaluation.grid_resolution)
        truth = kde_density(chain, evaluation.kde, grid)
        reference = _thin(chain, evaluation.num_samples)

        kl_values, l2_values, mmd_values, moments = [], [], [], []
        for T in maps:
            samples = conditional_sample(T, x_star, evaluation.num_samples, rng)
            if 'kl' in evaluation.metrics or 'relative_l2' in evaluation.metrics:
                estimate = kde_density(samples, evaluation.kde, grid)
                kl_values.append(kl_grid(truth, estimate))
                l2_values.append(relative_l2(estimate, truth))
            if 'mmd' in evaluation.metrics:
                mmd_values.append(mmd(samples, reference))
            if 'moments' in evaluation.metrics:
                moments.append(sample_moments(samples))
        write_matrix_csv(
            eval_dir / f'samples_xstar{i}.csv', samples, ['y1', 'y2'], _sample_comments(x_star.tolist(), checksum),
        )

        if 'kl' in evaluation.metrics:
            rows.append(_summary_row('kl', kl_values, label, KL_SCALE.get(config.problem, 1.0)))
        if 'relative_l2' in evaluation.metrics:
            rows.append(_summary_row('relative_l2', l2_values, label))
        if 'mmd' in evaluation.metrics:
            rows.append(_summary_row('mmd', mmd_values, label))
        if 'moments' in evaluation.metrics:
            rows.extend(_moment_rows(moments, f'{label}:mgan'))
            rows.extend(_moment_rows([sample_moments(chain)], f'{label}:mcmc'))
    return rows


def _monotonicity_rows(train_dir: Path, stems: list[Path]) -> list[MetricRow]:
    history = train_dir / 'history.csv'
    if not history.exists():
        return []
    columns, matrix, _ = read_matrix_csv(history)
    epochs = {int(stem.name.split('_')[1]) for stem in stems if stem.name.startswith('epoch_')}
    epoch_col, mono_col = columns.index('epoch'), columns.index('mono_prob')
    selected = [row[mono_col] for row in matrix if int(row[epoch_col]) in epochs] or [matrix[-1, mono_col]]
    return [_summary_row('mono_prob', selected, 'final')]


def cmd_evaluate(config: ExperimentConfig, checkpoints=None, reference=None, out=None) -> Path:
    paths = _paths(config, out)
    train_dir = Path(checkpoints) if checkpoints is not None else paths.train
    reference_dir = Path(reference) if reference is not None else paths.mcmc
    stems, maps = _load_maps(train_dir)
    checksums = [map_checksum(stem) for stem in stems]
    rng = np.random.default_rng(config.evaluation.seed)

    with experiment_lock(paths.root):
        paths.eval.mkdir(parents=True, exist_ok=True)
        if config.problem.startswith('synthetic-'):
            rows = _evaluate_synthetic(config, maps, rng, paths.eval, checksums[-1])
        elif config.problem == 'banana':
            rows = _evaluate_banana(config, maps, rng, paths.eval, checksums[-1])
        else:
            rows = _evaluate_posterior(config, maps, rng, paths.eval, reference_dir, checksums[-1])
        if 'mono_prob' in config.evaluation.metrics:
            rows.extend(_monotonicity_rows(train_dir, stems))
        report = write_metric_report(paths.eval / 'metrics.csv', rows)
        write_manifest(paths.eval, 'evaluate', {
            'config': config.to_dict(),
            'checkpoints': [str(stem) for stem in stems],
            'checkpoint_sha256': checksums,
            'reference': str(reference_dir) if config.problem in POSTERIOR_PROBLEMS else None,
        })
    logger.info('wrote %d metric rows to %s', len(rows), report)
    return report


# ----------------------------------------------------------------------
# kr-oracle
# ----------------------------------------------------------------------
def cmd_kr_oracle(config: ExperimentConfig, checkpoints=None, out=None, resolution: int = 101) -> list[Path]:
    """Dump the KR-map grid, the learned map on the same grid and the analytic conditional pdfs."""
    pid = synthetic_id(config.problem)
    paths = _paths(config, out)
    train_dir = Path(checkpoints) if checkpoints is not None else paths.train
    if (train_dir / 'map.json').exists():
        learned = load_map(train_dir / 'map')
    else:
        logger.warning('no trained map under %s; the learned column repeats the KR map', train_dir)
        learned = KrTransportMap(pid)

    with experiment_lock(paths.root):
        columns = ['x', 'u', 'kr', 'learned', 'abs_error', 'degenerate']
        table = kr_map_error_grid(pid, learned, resolution)
        grid_file = write_matrix_csv(
            paths.kr_oracle / 'kr_grid.csv',
            np.column_stack([table[c] for c in columns]),
            columns,
            [f'problem={config.problem}'],
        )

        conditional = AnalyticConditional(pid)
        y = np.linspace(-3.5, 3.5, 701)
        blocks = []
        for x in CONDITIONAL_CURVE_POINTS:
            xs = np.full_like(y, x)
            blocks.append(np.column_stack([xs, y, conditional.pdf(y, xs), degenerate_mask(pid, xs)]))
        pdf_file = write_matrix_csv(
            paths.kr_oracle / 'conditional_pdf.csv',
            np.vstack(blocks),
            ['x', 'y', 'pdf', 'degenerate'],
            [f'problem={config.problem}'],
        )
        write_manifest(paths.kr_oracle, 'kr-oracle', {
            'config': config.to_dict(),
            'learned': learned.kind,
            'resolution': resolution,
        })
    return [grid_file, pdf_file]
