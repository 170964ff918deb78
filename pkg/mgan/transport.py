"""Block- and fully-triangular transport maps, the reference sampler and
conditional sampling.

A map ``T(x, y) = (x, F(x, y))`` is represented by an object exposing ``n``,
``m``, ``transform(w)`` (the ``F`` block on a batch ``w = (x, y)``) and, for
trainable maps, ``forward``/``backward``/``networks``. Any object with
``n``, ``m`` and ``transform`` can be used for sampling, which is how the
analytic maps in :mod:`mgan.oracles` plug in.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mgan import nn
from mgan.artifacts import file_sha256, read_json, write_json
from mgan.errors import ConfigurationError, ContractError, ShapeError

logger = logging.getLogger(__name__)

MAP_KINDS = ('block', 'triangular')
DEFAULT_MONOTONICITY_PAIRS = 10_000


@dataclass
class Standardizer:
    """Per-column affine standardization of the (x, y) training coordinates."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray) -> 'Standardizer':
        def stats(cols):
            mean = cols.mean(axis=0) if cols.shape[1] else np.zeros(0)
            std = cols.std(axis=0) if cols.shape[1] else np.zeros(0)
            return mean, np.where(std > 0.0, std, 1.0)

        x_mean, x_std = stats(x)
        y_mean, y_std = stats(y)
        return cls(x_mean, x_std, y_mean, y_std)

    def transform_x(self, x):
        return (np.asarray(x, dtype=np.float64) - self.x_mean) / self.x_std

    def transform_y(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def inverse_y(self, y):
        return np.asarray(y, dtype=np.float64) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {key: getattr(self, key).tolist() for key in ('x_mean', 'x_std', 'y_mean', 'y_std')}

    @classmethod
    def from_dict(cls, payload: dict) -> 'Standardizer':
        return cls(**{key: np.asarray(payload[key], dtype=np.float64) for key in ('x_mean', 'x_std', 'y_mean', 'y_std')})


def _check_width(T, batch) -> np.ndarray:
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != T.n + T.m:
        raise ShapeError(f'map expects batches of width n+m={T.n + T.m}, got shape {arr.shape}')
    return arr


class BlockTriangularMap:
    """T(x, y) = (x, F(x, y)) with one dense network F: R^(n+m) -> R^m."""

    kind = 'block'

    def __init__(self, n: int, m: int, network: nn.DenseNetwork, scaler: Standardizer | None = None):
        if network.input_dim != n + m or network.output_dim != m:
            raise ShapeError(
                f'F must map R^{n + m} -> R^{m}, got {network.input_dim} -> {network.output_dim}'
            )
        self.n = n
        self.m = m
        self.network = network
        self.scaler = scaler

    @property
    def d(self) -> int:
        return self.n + self.m

    @property
    def networks(self) -> list[nn.DenseNetwork]:
        return [self.network]

    def transform(self, batch) -> np.ndarray:
        return nn.forward(self.network, _check_width(self, batch))

    def forward(self, batch):
        out, cache = nn.forward_with_cache(self.network, _check_width(self, batch))
        return out, [cache]

    def backward(self, caches, grad_y: np.ndarray) -> list[nn.ParamList]:
        grads, _ = nn.backward(self.network, caches[0], grad_y)
        return [grads]

    def copy(self) -> 'BlockTriangularMap':
        return BlockTriangularMap(self.n, self.m, self.network.copy(), self.scaler)


class FullyTriangularMap:
    """Component i sees x and the first i+1 ordered y variables and emits one scalar.

    ``order`` permutes the y variables: component i reads ``y[order[:i+1]]``
    and writes output column ``order[i]``.
    """

    kind = 'triangular'

    def __init__(
        self,
        n: int,
        m: int,
        components: list[nn.DenseNetwork],
        order: list[int] | None = None,
        scaler: Standardizer | None = None,
    ):
        order = list(range(m)) if order is None else [int(i) for i in order]
        if sorted(order) != list(range(m)):
            raise ConfigurationError(f'order {order} is not a permutation of range({m})')
        if len(components) != m:
            raise ShapeError(f'expected {m} component networks, got {len(components)}')
        for i, comp in enumerate(components):
            if comp.input_dim != n + i + 1 or comp.output_dim != 1:
                raise ShapeError(
                    f'component {i} must map R^{n + i + 1} -> R, got {comp.input_dim} -> {comp.output_dim}'
                )
        self.n = n
        self.m = m
        self.components = components
        self.order = order
        self.scaler = scaler

    @property
    def d(self) -> int:
        return self.n + self.m

    @property
    def networks(self) -> list[nn.DenseNetwork]:
        return list(self.components)

    def _component_inputs(self, batch: np.ndarray, i: int) -> np.ndarray:
        x = batch[:, :self.n]
        y_ordered = batch[:, self.n:][:, self.order]
        return np.hstack([x, y_ordered[:, :i + 1]])

    def transform(self, batch) -> np.ndarray:
        out, _ = self.forward(batch)
        return out

    def forward(self, batch):
        batch = _check_width(self, batch)
        out = np.empty((batch.shape[0], self.m))
        caches = []
        for i, comp in enumerate(self.components):
            values, cache = nn.forward_with_cache(comp, self._component_inputs(batch, i))
            out[:, self.order[i]] = values[:, 0]
            caches.append(cache)
        return out, caches

    def backward(self, caches, grad_y: np.ndarray) -> list[nn.ParamList]:
        grads = []
        for i, comp in enumerate(self.components):
            column = grad_y[:, self.order[i]][:, None]
            comp_grads, _ = nn.backward(comp, caches[i], column)
            grads.append(comp_grads)
        return grads

    def copy(self) -> 'FullyTriangularMap':
        return FullyTriangularMap(self.n, self.m, [c.copy() for c in self.components], list(self.order), self.scaler)


def _child_seeds(seed: int, count: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


def build_block_map(n: int, m: int, hidden, seed: int, alpha: float = nn.LEAKY_SLOPE) -> BlockTriangularMap:
    network = nn.init_network([n + m, *hidden, m], seed, alpha)
    return BlockTriangularMap(n, m, network)


def build_triangular_map(
    n: int,
    m: int,
    hidden,
    seed: int,
    alpha: float = nn.LEAKY_SLOPE,
    reverse: bool = False,
) -> FullyTriangularMap:
    seeds = _child_seeds(seed, m)
    components = [nn.init_network([n + i + 1, *hidden, 1], seeds[i], alpha) for i in range(m)]
    order = list(reversed(range(m))) if reverse else list(range(m))
    return FullyTriangularMap(n, m, components, order)


# ----------------------------------------------------------------------
# Reference measure
# ----------------------------------------------------------------------
class ReferenceSampler:
    """Draws w = (x~, y~): x~ resampled from the data x-column, y~ ~ N(0, I_m)."""

    def __init__(self, x_data: np.ndarray, m: int, rng: np.random.Generator):
        x_data = np.asarray(x_data, dtype=np.float64)
        if x_data.ndim != 2 or x_data.shape[0] == 0:
            raise ConfigurationError('reference sampler needs a non-empty x-column (2-D array)')
        if m < 1:
            raise ConfigurationError(f'Gaussian dimension m must be >= 1, got {m}')
        self.x_data = x_data
        self.m = m
        self.rng = rng

    @property
    def n(self) -> int:
        return self.x_data.shape[1]

    def sample(self, batch_size: int) -> np.ndarray:
        if batch_size < 1:
            raise ContractError(f'batch_size must be >= 1, got {batch_size}')
        idx = self.rng.integers(0, self.x_data.shape[0], size=batch_size)
        noise = self.rng.standard_normal((batch_size, self.m))
        return np.hstack([self.x_data[idx], noise])


def sample_reference(sampler: ReferenceSampler, batch_size: int) -> np.ndarray:
    return sampler.sample(batch_size)


# ----------------------------------------------------------------------
# Map operations
# ----------------------------------------------------------------------
def apply_map(T, batch) -> np.ndarray:
    """Return (x, F(x, y)); the x-block is copied through untouched."""
    batch = _check_width(T, batch)
    return np.hstack([batch[:, :T.n], T.transform(batch)])


def monotonicity_inner_products(T, batch_w, batch_wp) -> np.ndarray:
    w = _check_width(T, batch_w)
    wp = _check_width(T, batch_wp)
    if w.shape[0] != wp.shape[0]:
        raise ContractError(f'paired batches differ in size: {w.shape[0]} vs {wp.shape[0]}')
    diff = w - wp
    return np.sum((apply_map(T, w) - apply_map(T, wp)) * diff, axis=1)


def monotonicity_penalty(T, batch_w, batch_wp) -> float:
    """Mean of <T(w_j) - T(w'_j), w_j - w'_j> over row-paired batches."""
    return float(np.mean(monotonicity_inner_products(T, batch_w, batch_wp)))


def monotonicity_probability(T, sampler: ReferenceSampler, num_pairs: int = DEFAULT_MONOTONICITY_PAIRS) -> float:
    """Fraction of independent reference pairs with a positive monotonicity inner product."""
    if num_pairs < 1:
        raise ContractError(f'num_pairs must be >= 1, got {num_pairs}')
    w = sampler.sample(num_pairs)
    wp = sampler.sample(num_pairs)
    return float(np.mean(monotonicity_inner_products(T, w, wp) > 0.0))


def _as_rows(values, width: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None] if width == 1 else arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ShapeError(f'expected rows of width {width}, got shape {np.shape(values)}')
    return arr


def push_forward(T, x_rows, u_rows) -> np.ndarray:
    """F(x, u) row by row with x and the returned y in data coordinates."""
    x_rows = _as_rows(x_rows, T.n)
    u_rows = _as_rows(u_rows, T.m)
    if x_rows.shape[0] != u_rows.shape[0]:
        raise ContractError(f'x and u rows differ: {x_rows.shape[0]} vs {u_rows.shape[0]}')
    scaler = getattr(T, 'scaler', None)
    x_in = scaler.transform_x(x_rows) if scaler is not None else x_rows
    y = T.transform(np.hstack([x_in, u_rows]))
    return scaler.inverse_y(y) if scaler is not None else y


def conditional_sample(T, x_star, num_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Draw y_i = F(x*, u_i) with u_i ~ N(0, I_m); x* and y are in data coordinates."""
    x_star = np.atleast_1d(np.asarray(x_star, dtype=np.float64))
    if x_star.ndim != 1 or x_star.shape[0] != T.n:
        raise ShapeError(f'x* must have length n={T.n}, got shape {x_star.shape}')
    if num_samples < 1:
        raise ContractError(f'num_samples must be >= 1, got {num_samples}')
    u = rng.standard_normal((num_samples, T.m))
    return push_forward(T, np.tile(x_star, (num_samples, 1)), u)


def joint_sample(T, x_rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One y per given x row, returning (x, y) rows in data coordinates."""
    x_rows = _as_rows(x_rows, T.n)
    u = rng.standard_normal((x_rows.shape[0], T.m))
    return np.hstack([x_rows, push_forward(T, x_rows, u)])


# ----------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------
def save_map(T, stem) -> list[Path]:
    """Write ``<stem>.json`` plus one ``.mgan`` network file per component."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    files = []
    for i, net in enumerate(T.networks):
        files.append(nn.save_network(net, stem.parent / f'{stem.name}.F{i}.mgan'))
    meta = {
        'kind': T.kind,
        'n': T.n,
        'm': T.m,
        'alpha': T.networks[0].alpha,
        'networks': [f.name for f in files],
        'order': getattr(T, 'order', None),
        'scaler': T.scaler.to_dict() if T.scaler is not None else None,
    }
    files.append(write_json(stem.parent / f'{stem.name}.json', meta))
    return files


def load_map(stem):
    stem = Path(stem)
    meta = read_json(stem.parent / f'{stem.name}.json')
    if meta.get('kind') not in MAP_KINDS:
        raise ConfigurationError(f"unknown map kind {meta.get('kind')!r} in {stem}")
    networks = [nn.load_network(stem.parent / name, meta['alpha']) for name in meta['networks']]
    scaler = Standardizer.from_dict(meta['scaler']) if meta.get('scaler') else None
    if meta['kind'] == 'block':
        return BlockTriangularMap(meta['n'], meta['m'], networks[0], scaler)
    return FullyTriangularMap(meta['n'], meta['m'], networks, meta['order'], scaler)


def map_checksum(stem) -> str:
    stem = Path(stem)
    meta = read_json(stem.parent / f'{stem.name}.json')
    return file_sha256(*(stem.parent / name for name in meta['networks']))
