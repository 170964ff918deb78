"""Alternating critic/generator optimization with the monotonicity penalty.

Each generator update draws three minibatches: data rows z ~ nu and two
independent reference batches w, w' ~ eta. The critic sees z and T(w); the
generator minimizes its GAN loss on T(w) minus ``lam`` times the paired
monotonicity penalty on (w, w'). WGAN-GP runs ``critic_ratio`` critic updates
(each with fresh z, w) before every generator update.
"""

import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np
from tqdm import tqdm

from mgan import nn
from mgan.artifacts import write_matrix_csv
from mgan.errors import ConfigurationError, NumericalError
from mgan.losses import LossConfig, critic_loss, generator_loss
from mgan.transport import (
    MAP_KINDS,
    ReferenceSampler,
    Standardizer,
    apply_map,
    build_block_map,
    build_triangular_map,
    monotonicity_probability,
)

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = (256, 512, 128)
HISTORY_COLUMNS = ['epoch', 'gen_loss', 'disc_loss', 'penalty', 'mono_prob']


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    lam: float = 0.01
    batch_size: int = 100
    epochs: int = 300
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    critic_updates: int | None = None
    seed: int = 0
    generator_hidden: list[int] = field(default_factory=lambda: list(DEFAULT_HIDDEN))
    discriminator_hidden: list[int] = field(default_factory=lambda: list(DEFAULT_HIDDEN))
    alpha: float = nn.LEAKY_SLOPE
    map_kind: str = 'block'
    reverse_order: bool = False
    normalize: bool = False
    monotonicity_pairs: int = 10_000
    keep_last: int = 10

    @property
    def critic_ratio(self) -> int:
        return self.critic_updates if self.critic_updates is not None else self.loss.critic_ratio

    @property
    def run_label(self) -> str:
        return 'cgan' if self.lam == 0 else 'mgan'

    def validate(self) -> list[str]:
        errors = list(self.loss.validate())
        if not self.lam >= 0:
            errors.append(f'lambda must be >= 0, got {self.lam}')
        if self.batch_size < 2:
            errors.append(f'batch_size must be >= 2 for the paired penalty, got {self.batch_size}')
        if self.epochs < 1:
            errors.append(f'epochs must be >= 1, got {self.epochs}')
        if not self.lr > 0:
            errors.append(f'learning rate must be > 0, got {self.lr}')
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            errors.append('Adam betas must lie in [0, 1)')
        if self.critic_updates is not None and self.critic_updates < 1:
            errors.append(f'critic_updates must be >= 1, got {self.critic_updates}')
        if self.map_kind not in MAP_KINDS:
            errors.append(f'map_kind must be one of {MAP_KINDS}, got {self.map_kind!r}')
        if self.reverse_order and self.map_kind != 'triangular':
            errors.append('reverse_order only applies to triangular maps')
        for name in ('generator_hidden', 'discriminator_hidden'):
            sizes = getattr(self, name)
            if not sizes or any(isinstance(s, bool) or not isinstance(s, int) or s < 1 for s in sizes):
                errors.append(f'{name} must be a non-empty list of positive integers')
        if self.monotonicity_pairs < 1:
            errors.append('monotonicity_pairs must be >= 1')
        if self.keep_last < 1:
            errors.append('keep_last must be >= 1')
        return errors

    def to_dict(self) -> dict:
        payload = {f.name: getattr(self, f.name) for f in fields(self)}
        payload['loss'] = self.loss.to_dict()
        payload['generator_hidden'] = list(self.generator_hidden)
        payload['discriminator_hidden'] = list(self.discriminator_hidden)
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> 'TrainConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigurationError(f'unknown train keys: {sorted(unknown)}')
        values = dict(payload)
        if 'loss' in values:
            values['loss'] = LossConfig.from_dict(values['loss'])
        config = cls(**values)
        errors = config.validate()
        if errors:
            raise ConfigurationError.from_errors('Invalid train config', errors)
        return config


@dataclass
class EpochRecord:
    epoch: int
    gen_loss: float
    disc_loss: float
    penalty: float
    mono_prob: float
    wall_clock: float = 0.0


@dataclass
class TrainingHistory:
    lam: float
    loss_kind: str
    records: list[EpochRecord] = field(default_factory=list)
    generator_updates: int = 0
    critic_updates: int = 0

    @property
    def run_label(self) -> str:
        return 'cgan' if self.lam == 0 else 'mgan'

    def append(self, record: EpochRecord) -> None:
        if not 0.0 <= record.mono_prob <= 1.0:
            raise ValueError(f'monotonicity probability {record.mono_prob} outside [0, 1]')
        self.records.append(record)

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [[r.epoch, r.gen_loss, r.disc_loss, r.penalty, r.mono_prob] for r in self.records]
        ).reshape(-1, len(HISTORY_COLUMNS))

    def to_csv(self, path):
        comment = f'run={self.run_label} lambda={self.lam!r} loss={self.loss_kind}'
        return write_matrix_csv(path, self.as_matrix(), HISTORY_COLUMNS, [comment])


@dataclass
class Snapshot:
    epoch: int
    transport_map: object
    discriminator: nn.DenseNetwork


@dataclass
class TrainingResult:
    transport_map: object
    discriminator: nn.DenseNetwork
    history: TrainingHistory
    snapshots: list[Snapshot]


class _MinibatchStream:
    """Shuffled passes over the data without replacement; reshuffles when exhausted."""

    def __init__(self, data: np.ndarray, batch_size: int, rng: np.random.Generator):
        self.data = data
        self.batch_size = batch_size
        self.rng = rng
        self._order = rng.permutation(data.shape[0])
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > self.data.shape[0]:
            self._order = self.rng.permutation(self.data.shape[0])
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return self.data[idx]


def _ensure_finite(value: float, what: str, epoch: int, step: int) -> None:
    if not np.isfinite(value):
        logger.error('%s loss became non-finite at epoch %d step %d', what, epoch, step)
        raise NumericalError(f'{what} loss is not finite', epoch=epoch, step=step)


def build_map(config: TrainConfig, n: int, m: int, seed: int):
    if config.map_kind == 'triangular':
        return build_triangular_map(n, m, config.generator_hidden, seed, config.alpha, config.reverse_order)
    return build_block_map(n, m, config.generator_hidden, seed, config.alpha)


def evaluate_epoch(T, sampler: ReferenceSampler, num_pairs: int) -> float:
    return monotonicity_probability(T, sampler, num_pairs)


def _generator_update(T, f, w, wp, config: TrainConfig, states: list[nn.AdamState]) -> tuple[float, float]:
    n, k = T.n, w.shape[0]
    fake_y, caches_w = T.forward(w)
    evaluation = generator_loss(config.loss, f, np.hstack([w[:, :n], fake_y]))
    fake_yp, caches_wp = T.forward(wp)

    diff = w - wp
    image_diff = np.hstack([diff[:, :n], fake_y - fake_yp])
    penalty = float(np.mean(np.sum(image_diff * diff, axis=1)))

    # objective = gan - lam * penalty; only the y-block of T depends on theta
    grad_w = evaluation.fake_grads[:, n:] - config.lam * diff[:, n:] / k
    grad_wp = config.lam * diff[:, n:] / k
    grads_w = T.backward(caches_w, grad_w)
    grads_wp = T.backward(caches_wp, grad_wp)
    for net, state, gw, gwp in zip(T.networks, states, grads_w, grads_wp):
        nn.adam_step(state, net.parameters(), [a + b for a, b in zip(gw, gwp)])
    return evaluation.value, penalty


def train(config: TrainConfig, dataset, progress: bool = False) -> TrainingResult:
    """Fit a monotone triangular map to ``dataset``; deterministic given ``config.seed``."""
    errors = config.validate()
    if errors:
        raise ConfigurationError.from_errors('Invalid train config', errors)
    x = np.asarray(dataset.x, dtype=np.float64)
    y = np.asarray(dataset.y, dtype=np.float64)
    if y.shape[0] == 0:
        raise ConfigurationError('training dataset is empty')
    if y.shape[0] < config.batch_size:
        raise ConfigurationError(f'dataset has {y.shape[0]} rows, fewer than batch_size={config.batch_size}')
    n, m = x.shape[1], y.shape[1]

    scaler = Standardizer.fit(x, y) if config.normalize else None
    if scaler is not None:
        x, y = scaler.transform_x(x), scaler.transform_y(y)

    seeds = np.random.SeedSequence(config.seed).spawn(6)
    gen_seed, disc_seed = (int(s.generate_state(1)[0]) for s in seeds[:2])
    data_rng, ref_rng, mono_rng, mix_rng = (np.random.default_rng(s) for s in seeds[2:])

    T = build_map(config, n, m, gen_seed)
    T.scaler = scaler
    f = nn.init_network([n + m, *config.discriminator_hidden, 1], disc_seed, config.alpha)
    hyper = {'lr': config.lr, 'beta1': config.beta1, 'beta2': config.beta2, 'eps': config.eps}
    gen_states = [nn.AdamState.for_params(net.parameters(), **hyper) for net in T.networks]
    disc_state = nn.AdamState.for_params(f.parameters(), **hyper)

    sampler = ReferenceSampler(x, m, ref_rng)
    mono_sampler = ReferenceSampler(x, m, mono_rng)
    stream = _MinibatchStream(np.hstack([x, y]), config.batch_size, data_rng)
    history = TrainingHistory(config.lam, config.loss.kind)
    snapshots: list[Snapshot] = []
    steps = y.shape[0] // config.batch_size
    ratio = config.critic_ratio

    logger.info(
        'training %s (%s map, loss=%s, lambda=%g) on N=%d, n=%d, m=%d for %d epochs x %d steps',
        config.run_label, config.map_kind, config.loss.kind, config.lam, y.shape[0], n, m, config.epochs, steps,
    )
    for epoch in tqdm(range(1, config.epochs + 1), desc='epochs', disable=not progress):
        started = time.perf_counter()
        gen_total = disc_total = penalty_total = 0.0
        for step in range(steps):
            for _ in range(ratio):
                z = stream.next()
                w = sampler.sample(config.batch_size)
                evaluation = critic_loss(config.loss, f, z, apply_map(T, w), mix_rng)
                _ensure_finite(evaluation.value, 'discriminator', epoch, step)
                nn.adam_step(disc_state, f.parameters(), evaluation.critic_grads)
                history.critic_updates += 1
                disc_total += evaluation.value
            if ratio > 1:
                w = sampler.sample(config.batch_size)
            wp = sampler.sample(config.batch_size)
            gen_value, penalty = _generator_update(T, f, w, wp, config, gen_states)
            _ensure_finite(gen_value - config.lam * penalty, 'generator', epoch, step)
            history.generator_updates += 1
            gen_total += gen_value
            penalty_total += penalty

        mono = evaluate_epoch(T, mono_sampler, config.monotonicity_pairs)
        record = EpochRecord(
            epoch,
            gen_total / steps,
            disc_total / (steps * ratio),
            penalty_total / steps,
            mono,
            time.perf_counter() - started,
        )
        history.append(record)
        logger.info(
            'epoch %d: gen=%.5f disc=%.5f penalty=%.5f mono_prob=%.4f (%.1fs)',
            epoch, record.gen_loss, record.disc_loss, record.penalty, record.mono_prob, record.wall_clock,
        )
        if epoch > config.epochs - config.keep_last:
            snapshots.append(Snapshot(epoch, T.copy(), f.copy()))

    return TrainingResult(T, f, history, snapshots)
