"""
mgan package
Monotone block-triangular transport maps trained adversarially, with the
benchmark problems, ground-truth oracles and evaluation metrics around them
"""

from .config import ExperimentConfig, load_config, preset, save_config
from .errors import ConfigurationError, ContractError, DomainError, MganError, NumericalError, ShapeError
from .losses import LossConfig
from .metrics import DensityGrid, KdeConfig, kde_density, kl_grid, mmd, relative_l2, sample_moments
from .nn import DenseNetwork, adam_step, forward, grad_input, grad_params, init_network
from .oracles import AnalyticConditional, McmcConfig, kr_map, mcmc_sample, true_joint_density
from .pipeline import cmd_evaluate, cmd_generate, cmd_kr_oracle, cmd_mcmc, cmd_train
from .problems import DarcyGrid, JointDataset, generate
from .trainer import TrainConfig, train
from .transport import (
    BlockTriangularMap,
    FullyTriangularMap,
    apply_map,
    conditional_sample,
    monotonicity_penalty,
    monotonicity_probability,
)

__all__ = [
    'AnalyticConditional',
    'BlockTriangularMap',
    'ConfigurationError',
    'ContractError',
    'DarcyGrid',
    'DenseNetwork',
    'DensityGrid',
    'DomainError',
    'ExperimentConfig',
    'FullyTriangularMap',
    'JointDataset',
    'KdeConfig',
    'LossConfig',
    'McmcConfig',
    'MganError',
    'NumericalError',
    'ShapeError',
    'TrainConfig',
    'adam_step',
    'apply_map',
    'cmd_evaluate',
    'cmd_generate',
    'cmd_kr_oracle',
    'cmd_mcmc',
    'cmd_train',
    'conditional_sample',
    'forward',
    'generate',
    'grad_input',
    'grad_params',
    'init_network',
    'kde_density',
    'kl_grid',
    'kr_map',
    'load_config',
    'mcmc_sample',
    'mmd',
    'monotonicity_penalty',
    'monotonicity_probability',
    'preset',
    'relative_l2',
    'sample_moments',
    'save_config',
    'train',
    'true_joint_density',
]
