"""LSGAN and WGAN-GP objectives, split into critic-side and generator-side losses.

Sign convention: the critic minimizes ``E[f(T(w))] - E[f(z)] + gamma * GP``
exactly as written; the generator minimizes ``-E[f(T(w))]``.

Every loss returns a :class:`LossEvaluation` holding both gradient sides.
The side a loss must not move is returned as zeros, so a critic loss never
pushes gradient into the map and a generator loss never touches ``f``.
"""

import logging
from dataclasses import dataclass

import numpy as np

from mgan import nn
from mgan.errors import ConfigurationError, ContractError, ShapeError

logger = logging.getLogger(__name__)

LOSS_KINDS = ('lsgan', 'wgan-gp')
DEFAULT_GAMMA = 10.0


@dataclass
class LossConfig:
    kind: str = 'lsgan'
    gamma: float = DEFAULT_GAMMA

    def validate(self) -> list[str]:
        errors = []
        if self.kind not in LOSS_KINDS:
            errors.append(f'loss kind must be one of {LOSS_KINDS}, got {self.kind!r}')
        if self.kind == 'wgan-gp' and not self.gamma > 0:
            errors.append(f'gradient-penalty weight gamma must be > 0, got {self.gamma}')
        return errors

    def to_dict(self) -> dict:
        return {'kind': self.kind, 'gamma': self.gamma}

    @classmethod
    def from_dict(cls, payload: dict) -> 'LossConfig':
        unknown = set(payload) - {'kind', 'gamma'}
        if unknown:
            raise ConfigurationError(f'unknown loss keys: {sorted(unknown)}')
        config = cls(**payload)
        errors = config.validate()
        if errors:
            raise ConfigurationError.from_errors('Invalid loss config', errors)
        return config

    @property
    def critic_ratio(self) -> int:
        return 5 if self.kind == 'wgan-gp' else 1


@dataclass
class LossEvaluation:
    value: float
    critic_grads: nn.ParamList
    fake_grads: np.ndarray


def _rows(f: nn.DenseNetwork, batch, name: str) -> np.ndarray:
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != f.input_dim:
        raise ShapeError(f'{name} batch must have width {f.input_dim}, got shape {np.shape(batch)}')
    if arr.shape[0] == 0:
        raise ContractError(f'{name} batch is empty')
    return arr


def _zero_grads(f: nn.DenseNetwork) -> nn.ParamList:
    return [np.zeros_like(p) for p in f.parameters()]


def _add(a: nn.ParamList, b: nn.ParamList) -> nn.ParamList:
    return [x + y for x, y in zip(a, b)]


def lsgan_discriminator_loss(f: nn.DenseNetwork, real_batch, fake_batch) -> LossEvaluation:
    """mean (f(z) - 1)^2 + mean f(T(w))^2 with the fake rows held constant."""
    if f.output_dim != 1:
        raise ContractError('the discriminator must have scalar output')
    real = _rows(f, real_batch, 'real')
    fake = _rows(f, fake_batch, 'fake')
    real_out, real_cache = nn.forward_with_cache(f, real)
    fake_out, fake_cache = nn.forward_with_cache(f, fake)
    value = np.mean((real_out - 1.0) ** 2) + np.mean(fake_out ** 2)
    real_grads, _ = nn.backward(f, real_cache, 2.0 * (real_out - 1.0) / real.shape[0])
    fake_grads, _ = nn.backward(f, fake_cache, 2.0 * fake_out / fake.shape[0])
    return LossEvaluation(float(value), _add(real_grads, fake_grads), np.zeros_like(fake))


def lsgan_generator_loss(f: nn.DenseNetwork, fake_batch) -> LossEvaluation:
    """mean (f(T(w)) - 1)^2; gradient flows to the fake rows only."""
    if f.output_dim != 1:
        raise ContractError('the discriminator must have scalar output')
    fake = _rows(f, fake_batch, 'fake')
    out, cache = nn.forward_with_cache(f, fake)
    value = np.mean((out - 1.0) ** 2)
    _, grad_fake = nn.backward(f, cache, 2.0 * (out - 1.0) / fake.shape[0])
    return LossEvaluation(float(value), _zero_grads(f), grad_fake)


def wgan_gp_critic_loss(
    f: nn.DenseNetwork,
    real_batch,
    fake_batch,
    rng: np.random.Generator,
    gamma: float = DEFAULT_GAMMA,
) -> LossEvaluation:
    """mean f(T(w)) - mean f(z) + gamma * mean (||grad f(z_hat)|| - 1)^2.

    z_hat_j = a_j z_j + (1 - a_j) T(w_j) with a_j ~ U[0, 1] drawn per row.
    """
    if f.output_dim != 1:
        raise ContractError('the critic must have scalar output')
    real = _rows(f, real_batch, 'real')
    fake = _rows(f, fake_batch, 'fake')
    if real.shape[0] != fake.shape[0]:
        raise ContractError(f'real and fake batches must pair row by row: {real.shape[0]} vs {fake.shape[0]}')
    k = real.shape[0]

    real_out, real_cache = nn.forward_with_cache(f, real)
    fake_out, fake_cache = nn.forward_with_cache(f, fake)
    real_grads, _ = nn.backward(f, real_cache, np.full_like(real_out, -1.0 / k))
    fake_grads, _ = nn.backward(f, fake_cache, np.full_like(fake_out, 1.0 / k))

    mix = rng.uniform(0.0, 1.0, size=(k, 1))
    z_hat = mix * real + (1.0 - mix) * fake
    input_grads = nn.grad_input(f, z_hat)
    norms = np.linalg.norm(input_grads, axis=1, keepdims=True)
    penalty = gamma * np.mean((norms - 1.0) ** 2)
    safe = np.where(norms > 0.0, norms, 1.0)
    directions = gamma * 2.0 * (norms - 1.0) * input_grads / safe / k
    _, penalty_grads = nn.grad_params_through_input_grad(f, z_hat, directions)

    value = np.mean(fake_out) - np.mean(real_out) + penalty
    grads = _add(_add(real_grads, fake_grads), penalty_grads)
    return LossEvaluation(float(value), grads, np.zeros_like(fake))


def gradient_penalty(f: nn.DenseNetwork, points, gamma: float = DEFAULT_GAMMA) -> float:
    """gamma * mean (||grad f(p)|| - 1)^2 over the given points."""
    grads = nn.grad_input(f, _rows(f, points, 'penalty'))
    return float(gamma * np.mean((np.linalg.norm(grads, axis=1) - 1.0) ** 2))


def wgan_generator_loss(f: nn.DenseNetwork, fake_batch) -> LossEvaluation:
    """-mean f(T(w)); gradient flows to the fake rows only."""
    if f.output_dim != 1:
        raise ContractError('the critic must have scalar output')
    fake = _rows(f, fake_batch, 'fake')
    out, cache = nn.forward_with_cache(f, fake)
    _, grad_fake = nn.backward(f, cache, np.full_like(out, -1.0 / fake.shape[0]))
    return LossEvaluation(float(-np.mean(out)), _zero_grads(f), grad_fake)


def critic_loss(config: LossConfig, f, real_batch, fake_batch, rng) -> LossEvaluation:
    if config.kind == 'wgan-gp':
        return wgan_gp_critic_loss(f, real_batch, fake_batch, rng, config.gamma)
    return lsgan_discriminator_loss(f, real_batch, fake_batch)


def generator_loss(config: LossConfig, f, fake_batch) -> LossEvaluation:
    if config.kind == 'wgan-gp':
        return wgan_generator_loss(f, fake_batch)
    return lsgan_generator_loss(f, fake_batch)
