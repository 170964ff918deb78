"""Evaluation statistics: Gaussian KDE on tensor grids, relative L2, grid KL,
unbiased MMD and sample moments.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import logsumexp
from scipy.stats import kurtosis, skew

from mgan.errors import ConfigurationError, ContractError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 200
DEFAULT_PAD = 0.1
KL_FLOOR = 1e-12
BANDWIDTH_RULES = ('scott', 'cv-5fold')
CV_FACTORS = np.logspace(-1.0, 1.0, 20)
SAMPLE_CHUNK = 8_192
MEDIAN_SUBSAMPLE = 1_000


@dataclass
class DensityGrid:
    """Density values on the tensor product of ``axes`` (one 1-D axis per dimension)."""

    axes: list[np.ndarray]
    values: np.ndarray | None = None

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=np.float64) for a in self.axes]
        if not 1 <= len(self.axes) <= 2:
            raise ContractError(f'density grids are 1-D or 2-D, got {len(self.axes)} axes')
        if any(a.ndim != 1 or a.shape[0] < 2 for a in self.axes):
            raise ContractError('every grid axis needs at least two points')
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=np.float64)
            if self.values.shape != self.shape:
                raise ContractError(f'values shape {self.values.shape} does not match grid {self.shape}')

    @classmethod
    def around(cls, samples, resolution: int = DEFAULT_RESOLUTION, pad: float = DEFAULT_PAD) -> 'DensityGrid':
        """Regular grid over the sample bounding box expanded by ``pad`` of its width."""
        samples = _as_rows(samples)
        low, high = samples.min(axis=0), samples.max(axis=0)
        width = np.where(high > low, high - low, 1.0)
        low, high = low - pad * width, high + pad * width
        return cls([np.linspace(a, b, resolution) for a, b in zip(low, high)])

    @classmethod
    def box(cls, bounds, resolution: int = DEFAULT_RESOLUTION) -> 'DensityGrid':
        return cls([np.linspace(a, b, resolution) for a, b in bounds])

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.shape[0] for a in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod([a[1] - a[0] for a in self.axes]))

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing='ij')
        return np.column_stack([m.ravel() for m in mesh])

    def with_values(self, values) -> 'DensityGrid':
        return DensityGrid(self.axes, np.asarray(values, dtype=np.float64).reshape(self.shape))

    def evaluate(self, density) -> 'DensityGrid':
        """Fill the grid with ``density(points)`` where points has one row per cell."""
        return self.with_values(density(self.points()))

    def integral(self) -> float:
        return float(np.sum(self.values) * self.cell_volume)

    def same_support(self, other: 'DensityGrid') -> bool:
        return self.shape == other.shape and all(np.allclose(a, b) for a, b in zip(self.axes, other.axes))


@dataclass
class KdeConfig:
    bandwidth: float | str = 'scott'
    folds: int = 5
    seed: int = 0
    cv_subsample: int = 2_000

    def validate(self) -> list[str]:
        errors = []
        if isinstance(self.bandwidth, str):
            if self.bandwidth not in BANDWIDTH_RULES:
                errors.append(f'bandwidth must be positive or one of {BANDWIDTH_RULES}, got {self.bandwidth!r}')
        elif not self.bandwidth > 0:
            errors.append(f'bandwidth must be > 0, got {self.bandwidth}')
        if self.folds < 2:
            errors.append(f'folds must be >= 2, got {self.folds}')
        if self.cv_subsample < self.folds:
            errors.append('cv_subsample must be at least the fold count')
        return errors

    def to_dict(self) -> dict:
        return {'bandwidth': self.bandwidth, 'folds': self.folds, 'seed': self.seed, 'cv_subsample': self.cv_subsample}

    @classmethod
    def from_dict(cls, payload: dict) -> 'KdeConfig':
        unknown = set(payload) - {'bandwidth', 'folds', 'seed', 'cv_subsample'}
        if unknown:
            raise ConfigurationError(f'unknown kde keys: {sorted(unknown)}')
        config = cls(**payload)
        errors = config.validate()
        if errors:
            raise ConfigurationError.from_errors('Invalid KDE config', errors)
        return config


def _as_rows(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ContractError(f'samples must be a 1-D or 2-D array, got shape {arr.shape}')
    return arr


# ----------------------------------------------------------------------
# Kernel density estimation
# ----------------------------------------------------------------------
def scott_bandwidth(samples) -> np.ndarray:
    """Per-axis N^(-1/(k+4)) * std."""
    samples = _as_rows(samples)
    n, k = samples.shape
    std = samples.std(axis=0, ddof=1)
    if np.any(std <= 0.0) or not np.all(np.isfinite(std)):
        raise NumericalError(f'samples are degenerate (per-axis std {std.tolist()})')
    return n ** (-1.0 / (k + 4)) * std


def _heldout_log_density(train: np.ndarray, test: np.ndarray, bandwidth: np.ndarray) -> float:
    sq = cdist(test / bandwidth, train / bandwidth, 'sqeuclidean')
    norm = train.shape[0] * np.prod(bandwidth * math.sqrt(2.0 * math.pi))
    return float(np.mean(logsumexp(-0.5 * sq, axis=1) - math.log(norm)))


def cv_bandwidth(samples, folds: int = 5, seed: int = 0, subsample: int = 2_000) -> np.ndarray:
    """Scale Scott's rule by the factor in logspace(0.1, 10) with the best held-out log-density.

    The sweep runs on at most ``subsample`` rows; the winning factor is then
    applied to Scott's bandwidth of the full sample.
    """
    samples = _as_rows(samples)
    rng = np.random.default_rng(seed)
    if samples.shape[0] > subsample:
        pool = samples[rng.choice(samples.shape[0], subsample, replace=False)]
    else:
        pool = samples[rng.permutation(samples.shape[0])]
    base = scott_bandwidth(pool)
    splits = np.array_split(np.arange(pool.shape[0]), folds)
    scores = []
    for factor in CV_FACTORS:
        fold_scores = []
        for held in splits:
            mask = np.ones(pool.shape[0], dtype=bool)
            mask[held] = False
            fold_scores.append(_heldout_log_density(pool[mask], pool[held], factor * base))
        scores.append(np.mean(fold_scores))
    best = float(CV_FACTORS[int(np.argmax(scores))])
    logger.debug('cv bandwidth factor %.4g (held-out log-density %.5f)', best, max(scores))
    return best * scott_bandwidth(samples)


def resolve_bandwidth(samples, config: KdeConfig) -> np.ndarray:
    samples = _as_rows(samples)
    if config.bandwidth == 'scott':
        return scott_bandwidth(samples)
    if config.bandwidth == 'cv-5fold':
        return cv_bandwidth(samples, config.folds, config.seed, config.cv_subsample)
    if not config.bandwidth > 0:
        raise ConfigurationError(f'bandwidth must be > 0, got {config.bandwidth}')
    return np.full(samples.shape[1], float(config.bandwidth))


def kde_density(samples, config: KdeConfig, grid: DensityGrid) -> DensityGrid:
    """Gaussian KDE with a diagonal bandwidth, evaluated on ``grid``.

    The kernel factorizes over axes, so a 2-D grid is filled with one matrix
    product per sample chunk instead of a grid-by-sample distance table.
    """
    samples = _as_rows(samples)
    if samples.shape[0] < 2:
        raise ContractError('KDE needs at least two samples')
    if samples.shape[1] != grid.dim:
        raise ContractError(f'samples have {samples.shape[1]} columns but the grid is {grid.dim}-D')
    h = resolve_bandwidth(samples, config)
    total = np.zeros(grid.shape)
    for start in range(0, samples.shape[0], SAMPLE_CHUNK):
        chunk = samples[start:start + SAMPLE_CHUNK]
        factors = [
            np.exp(-0.5 * ((axis[:, None] - chunk[:, i][None, :]) / h[i]) ** 2)
            for i, axis in enumerate(grid.axes)
        ]
        if grid.dim == 1:
            total += factors[0].sum(axis=1)
        else:
            total += factors[0] @ factors[1].T
    values = total / (samples.shape[0] * np.prod(h * math.sqrt(2.0 * math.pi)))
    return grid.with_values(values)


# ----------------------------------------------------------------------
# Grid divergences
# ----------------------------------------------------------------------
def _check_pair(a: DensityGrid, b: DensityGrid) -> None:
    if a.values is None or b.values is None:
        raise ContractError('both grids must carry density values')
    if not a.same_support(b):
        raise ContractError(f'grids differ: {a.shape} vs {b.shape}')


def relative_l2(estimated: DensityGrid, truth: DensityGrid) -> float:
    _check_pair(estimated, truth)
    denominator = np.sqrt(np.sum(truth.values ** 2))
    if denominator == 0.0:
        raise ContractError('reference density is identically zero on the grid')
    return float(np.sqrt(np.sum((estimated.values - truth.values) ** 2)) / denominator)


def kl_grid(truth: DensityGrid, estimated: DensityGrid, floor: float = KL_FLOOR) -> float:
    """Riemann sum of truth * log(truth / max(est, floor)) over cells with truth > 0."""
    _check_pair(truth, estimated)
    if not floor > 0:
        raise ContractError(f'floor must be > 0, got {floor}')
    mask = truth.values > 0.0
    p = truth.values[mask]
    q = np.maximum(estimated.values[mask], floor)
    return float(np.sum(p * (np.log(p) - np.log(q))) * truth.cell_volume)


# ----------------------------------------------------------------------
# Maximum mean discrepancy
# ----------------------------------------------------------------------
def _spread(rows: np.ndarray, count: int) -> np.ndarray:
    if rows.shape[0] <= count:
        return rows
    return rows[np.linspace(0, rows.shape[0] - 1, count).astype(int)]


def median_bandwidth(samples_a, samples_b) -> float:
    """Median pairwise distance of the pooled sample (evenly thinned when large)."""
    a = _spread(_as_rows(samples_a), MEDIAN_SUBSAMPLE)
    b = _spread(_as_rows(samples_b), MEDIAN_SUBSAMPLE)
    distances = np.concatenate([pdist(a), pdist(b), cdist(a, b).ravel()])
    sigma = float(np.median(distances))
    if sigma <= 0.0:
        raise NumericalError('median pairwise distance is zero')
    return sigma


def _kernel_sum(a: np.ndarray, b: np.ndarray, sigma: float) -> float:
    total = 0.0
    for start in range(0, a.shape[0], SAMPLE_CHUNK // 4):
        block = cdist(a[start:start + SAMPLE_CHUNK // 4], b, 'sqeuclidean')
        total += float(np.sum(np.exp(-0.5 * block / sigma ** 2)))
    return total


def mmd(samples_a, samples_b, bandwidth: float | str = 'median') -> float:
    """Unbiased U-statistic estimate of MMD^2 with the kernel exp(-|a-b|^2 / (2 sigma^2))."""
    a = _as_rows(samples_a)
    b = _as_rows(samples_b)
    if a.shape[1] != b.shape[1]:
        raise ContractError(f'dimension mismatch: {a.shape[1]} vs {b.shape[1]}')
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ContractError('MMD needs at least two rows per sample')
    # canonical argument order keeps mmd(a, b) == mmd(b, a) bit for bit
    if (a.shape[0], a.tobytes()) > (b.shape[0], b.tobytes()):
        a, b = b, a
    if bandwidth == 'median':
        sigma = median_bandwidth(a, b)
    elif isinstance(bandwidth, str) or not bandwidth > 0:
        raise ConfigurationError(f"bandwidth must be > 0 or 'median', got {bandwidth!r}")
    else:
        sigma = float(bandwidth)
    m, n = a.shape[0], b.shape[0]
    # diagonal terms are exactly 1
    within_a = (_kernel_sum(a, a, sigma) - m) / (m * (m - 1))
    within_b = (_kernel_sum(b, b, sigma) - n) / (n * (n - 1))
    cross = _kernel_sum(a, b, sigma) / (m * n)
    return within_a + within_b - 2.0 * cross


# ----------------------------------------------------------------------
# Moments and summaries
# ----------------------------------------------------------------------
@dataclass
class SampleMoments:
    mean: np.ndarray
    variance: np.ndarray
    skewness: np.ndarray
    kurtosis: np.ndarray
    count: int = 0

    def rows(self) -> list[tuple[str, int, float]]:
        return [
            (name, i, float(value))
            for name in ('mean', 'variance', 'skewness', 'kurtosis')
            for i, value in enumerate(getattr(self, name))
        ]


def sample_moments(samples) -> SampleMoments:
    """Unbiased mean/variance plus m3/m2^1.5 skewness and non-excess m4/m2^2 kurtosis per column."""
    samples = _as_rows(samples)
    if samples.shape[0] < 4:
        raise ContractError(f'moments need at least 4 samples, got {samples.shape[0]}')
    variance = samples.var(axis=0, ddof=1)
    if np.any(variance <= 0.0):
        raise ContractError('samples have zero variance in at least one column')
    return SampleMoments(
        mean=samples.mean(axis=0),
        variance=variance,
        skewness=skew(samples, axis=0, bias=True),
        kurtosis=kurtosis(samples, axis=0, fisher=False, bias=True),
        count=samples.shape[0],
    )


@dataclass
class Summary:
    mean: float
    std: float
    values: list[float] = field(default_factory=list)

    @property
    def error_95(self) -> float:
        """1.96 * std / sqrt(k) over the k summarized values."""
        return 1.96 * self.std / math.sqrt(len(self.values)) if self.values else 0.0


def summarize(values) -> Summary:
    """Mean and sample std of per-checkpoint values (std 0 for a single value)."""
    values = [float(v) for v in values]
    if not values:
        raise ContractError('nothing to summarize')
    arr = np.asarray(values)
    std = float(arr.std(ddof=1)) if arr.shape[0] > 1 else 0.0
    return Summary(float(arr.mean()), std, values)
