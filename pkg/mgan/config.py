"""Experiment configuration: one JSON document per experiment, strict schema."""

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

from mgan.artifacts import read_json, write_json
from mgan.errors import ConfigurationError
from mgan.losses import LossConfig
from mgan.metrics import KdeConfig
from mgan.problems import BOD_X_STAR, PROBLEMS
from mgan.trainer import TrainConfig

logger = logging.getLogger(__name__)

METRICS = ('kl', 'relative_l2', 'mmd', 'moments', 'mono_prob')
DATASET_FORMATS = ('csv', 'binary')


def _strict(cls, payload: dict, context: str) -> dict:
    if not isinstance(payload, dict):
        raise ConfigurationError(f'{context} must be a JSON object')
    unknown = set(payload) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigurationError(f'unknown {context} keys: {sorted(unknown)}')
    return dict(payload)


@dataclass
class DatasetConfig:
    N: int = 50_000
    seed: int = 0
    reverse_order: bool = False
    interior_points: int = 63
    format: str = 'csv'

    def validate(self) -> list[str]:
        errors = []
        if self.N < 1:
            errors.append(f'dataset N must be >= 1, got {self.N}')
        if self.interior_points < 3:
            errors.append(f'interior_points must be >= 3, got {self.interior_points}')
        if self.format not in DATASET_FORMATS:
            errors.append(f'dataset format must be one of {DATASET_FORMATS}, got {self.format!r}')
        return errors

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, payload: dict) -> 'DatasetConfig':
        return cls(**_strict(cls, payload, 'dataset'))

    def generator_params(self, problem: str) -> dict:
        if problem == 'banana':
            return {'reverse_order': self.reverse_order}
        if problem == 'darcy':
            return {'interior_points': self.interior_points}
        return {}


@dataclass
class McmcSettings:
    chain_length: int = 30_000
    burn_in: int = 5_000
    proposal_std: list[float] | None = None
    tune: bool = True
    seed: int = 0

    def validate(self) -> list[str]:
        errors = []
        if self.chain_length < 1:
            errors.append(f'chain_length must be >= 1, got {self.chain_length}')
        if self.burn_in < 0:
            errors.append(f'burn_in must be >= 0, got {self.burn_in}')
        if self.proposal_std is not None and any(not s > 0 for s in self.proposal_std):
            errors.append('proposal_std entries must be positive')
        return errors

    def to_dict(self) -> dict:
        payload = {f.name: getattr(self, f.name) for f in fields(self)}
        if self.proposal_std is not None:
            payload['proposal_std'] = list(self.proposal_std)
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> 'McmcSettings':
        return cls(**_strict(cls, payload, 'mcmc'))


@dataclass
class EvaluationConfig:
    x_star: list[list[float]] = field(default_factory=list)
    metrics: list[str] = field(default_factory=lambda: ['kl', 'relative_l2', 'mono_prob'])
    num_samples: int = 10_000
    test_samples: int = 50_000
    grid_resolution: int = 200
    seed: int = 12_345
    kde: KdeConfig = field(default_factory=KdeConfig)
    mcmc: McmcSettings = field(default_factory=McmcSettings)

    def validate(self) -> list[str]:
        errors = [*self.kde.validate(), *self.mcmc.validate()]
        unknown = [name for name in self.metrics if name not in METRICS]
        if unknown:
            errors.append(f'unknown metrics {unknown}; expected a subset of {METRICS}')
        if self.num_samples < 4:
            errors.append(f'num_samples must be >= 4, got {self.num_samples}')
        if self.test_samples < 4:
            errors.append(f'test_samples must be >= 4, got {self.test_samples}')
        if self.grid_resolution < 2:
            errors.append(f'grid_resolution must be >= 2, got {self.grid_resolution}')
        return errors

    def to_dict(self) -> dict:
        payload = {f.name: getattr(self, f.name) for f in fields(self)}
        payload['x_star'] = [list(point) for point in self.x_star]
        payload['metrics'] = list(self.metrics)
        payload['kde'] = self.kde.to_dict()
        payload['mcmc'] = self.mcmc.to_dict()
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> 'EvaluationConfig':
        values = _strict(cls, payload, 'evaluation')
        if 'kde' in values:
            values['kde'] = KdeConfig.from_dict(values['kde'])
        if 'mcmc' in values:
            values['mcmc'] = McmcSettings.from_dict(values['mcmc'])
        return cls(**values)


@dataclass
class ExperimentConfig:
    problem: str
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output_dir: str = 'runs'

    def validate(self) -> list[str]:
        errors = []
        if self.problem not in PROBLEMS:
            errors.append(f'problem must be one of {PROBLEMS}, got {self.problem!r}')
        errors.extend(self.dataset.validate())
        errors.extend(self.train.validate())
        errors.extend(self.evaluation.validate())
        if self.dataset.reverse_order and self.problem != 'banana':
            errors.append('dataset.reverse_order only applies to the banana problem')
        return errors

    def to_dict(self) -> dict:
        return {
            'problem': self.problem,
            'dataset': self.dataset.to_dict(),
            'train': self.train.to_dict(),
            'evaluation': self.evaluation.to_dict(),
            'output_dir': self.output_dir,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> 'ExperimentConfig':
        values = _strict(cls, payload, 'experiment')
        if 'problem' not in values:
            raise ConfigurationError('experiment config needs a "problem"')
        if 'dataset' in values:
            values['dataset'] = DatasetConfig.from_dict(values['dataset'])
        if 'train' in values:
            values['train'] = TrainConfig.from_dict(values['train'])
        if 'evaluation' in values:
            values['evaluation'] = EvaluationConfig.from_dict(values['evaluation'])
        config = cls(**values)
        errors = config.validate()
        if errors:
            raise ConfigurationError.from_errors('Invalid experiment config', errors)
        return config

    def with_seed(self, seed: int) -> 'ExperimentConfig':
        """Copy with every stage seed replaced by ``seed``."""
        payload = self.to_dict()
        payload['dataset']['seed'] = seed
        payload['train']['seed'] = seed
        payload['evaluation']['mcmc']['seed'] = seed
        payload['evaluation']['seed'] = seed
        return ExperimentConfig.from_dict(payload)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        payload = read_json(path)
    except FileNotFoundError:
        raise ConfigurationError(f'config file {path} does not exist') from None
    config = ExperimentConfig.from_dict(payload)
    logger.debug('loaded %s config from %s', config.problem, path)
    return config


def save_config(config: ExperimentConfig, path) -> Path:
    return write_json(path, config.to_dict())


def preset(problem: str) -> ExperimentConfig:
    """Published hyperparameters for each problem."""
    if problem not in PROBLEMS:
        raise ConfigurationError(f'no preset for problem {problem!r}; expected one of {PROBLEMS}')
    train = TrainConfig(loss=LossConfig('lsgan'), lam=0.01)
    dataset = DatasetConfig()
    evaluation = EvaluationConfig()

    if problem == 'banana':
        dataset.N = 10_000
        train.lr = 0.5e-4
        train.normalize = True
        train.generator_hidden = [32, 64, 32]
        train.discriminator_hidden = [32, 64, 32]
        evaluation.kde = KdeConfig(bandwidth='cv-5fold')
    elif problem == 'bod':
        dataset.N = 5_000
        evaluation.x_star = [list(BOD_X_STAR)]
        evaluation.metrics = ['kl', 'relative_l2', 'mmd', 'moments', 'mono_prob']
        evaluation.mcmc = McmcSettings(proposal_std=[0.3, 0.5])
    elif problem == 'darcy':
        dataset.N = 100_000
        train.normalize = True
        evaluation.metrics = ['moments', 'mono_prob']
        evaluation.mcmc = McmcSettings(proposal_std=[0.05, 0.1])
    return ExperimentConfig(problem, dataset, train, evaluation, output_dir=f'runs/{problem}')


def triangular_preset(reverse: bool = False) -> ExperimentConfig:
    """Banana preset switched to the fully triangular map (22-46-22 per component).

    ``reverse`` swaps the data columns, so the map conditions y1 on y2.
    """
    config = preset('banana')
    config.train.map_kind = 'triangular'
    config.train.generator_hidden = [22, 46, 22]
    config.dataset.reverse_order = reverse
    return config
