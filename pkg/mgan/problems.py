"""Training-data generators: tanh regressions, the banana, BOD and Darcy flow.

Every generator takes an explicit ``numpy.random.Generator`` and returns a
:class:`JointDataset` whose rows are i.i.d. draws (x, y) from the joint law.
"""

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import erf

from mgan.artifacts import read_matrix_csv, write_matrix_csv
from mgan.errors import ConfigurationError, DomainError, NumericalError
from mgan.settings import worker_count

logger = logging.getLogger(__name__)

PROBLEMS = ('synthetic-4', 'synthetic-5', 'synthetic-6', 'banana', 'bod', 'darcy')
SYNTHETIC_IDS = (4, 5, 6)

X_RANGE = (-3.0, 3.0)
GAMMA_SHAPE = 1.0
GAMMA_SCALE = 0.3
INNER_NOISE_VARIANCE = 0.05

BOD_TIMES = np.arange(1.0, 6.0)
BOD_NOISE_VARIANCE = 1e-3
BOD_X_STAR = (0.18, 0.32, 0.42, 0.49, 0.54)

DARCY_A_RANGE = (3.0, 5.0)
DARCY_B_RANGE = (12.0, 16.0)
DARCY_NOISE_VARIANCE = 1e-7
DARCY_TEST_TRUTHS = ((3.5, 13.0), (4.0, 14.0), (4.5, 15.0))

DATASET_MAGIC = b'MGDS'
DATASET_VERSION = 1


@dataclass
class JointDataset:
    x: np.ndarray
    y: np.ndarray
    problem: str
    seed: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        errors = self.validate()
        if errors:
            raise ConfigurationError.from_errors('Invalid dataset', errors)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.y.shape[1]

    def __len__(self) -> int:
        return self.y.shape[0]

    def validate(self) -> list[str]:
        errors = []
        if self.y.ndim != 2 or self.y.shape[0] < 1:
            errors.append('dataset needs at least one row and a 2-D y block')
        elif self.x.shape[0] != self.y.shape[0]:
            errors.append('x and y blocks have different row counts')
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            errors.append('dataset contains non-finite entries')
        return errors

    def columns(self) -> list[str]:
        return [f'x{i + 1}' for i in range(self.n)] + [f'y{i + 1}' for i in range(self.m)]

    def as_matrix(self) -> np.ndarray:
        return np.hstack([self.x, self.y])

    def manifest(self) -> dict:
        return {'problem': self.problem, 'seed': self.seed, 'N': len(self), 'n': self.n, 'm': self.m, 'params': self.params}

    # ------------------------------------------------------------------
    # Persistence
    # ------------------------------------------------------------------
    def save_csv(self, path) -> Path:
        return write_matrix_csv(path, self.as_matrix(), self.columns())

    def save_binary(self, path) -> Path:
        path = Path(path)
        header = DATASET_MAGIC + struct.pack('<IIIQ', DATASET_VERSION, self.n, self.m, len(self))
        path.write_bytes(header + np.ascontiguousarray(self.as_matrix(), dtype='<f8').tobytes())
        return path

    @classmethod
    def load_csv(cls, path, problem: str = '', seed: int | None = None, params: dict | None = None) -> 'JointDataset':
        columns, rows, _ = read_matrix_csv(path)
        n = sum(1 for c in columns if c.startswith('x'))
        return cls(rows[:, :n], rows[:, n:], problem, seed, params or {})

    @classmethod
    def load_binary(cls, path, problem: str = '', seed: int | None = None, params: dict | None = None) -> 'JointDataset':
        payload = Path(path).read_bytes()
        if payload[:4] != DATASET_MAGIC:
            raise ConfigurationError(f'{path} is not a binary dataset')
        version, n, m, count = struct.unpack_from('<IIIQ', payload, 4)
        if version != DATASET_VERSION:
            raise ConfigurationError(f'unsupported dataset version {version}')
        rows = np.frombuffer(payload, dtype='<f8', offset=24).astype(np.float64)
        if rows.size != count * (n + m):
            raise ConfigurationError(f'{path} is truncated')
        rows = rows.reshape(count, n + m)
        return cls(rows[:, :n], rows[:, n:], problem, seed, params or {})


# ----------------------------------------------------------------------
# tanh regressions and the banana
# ----------------------------------------------------------------------
def gen_synthetic(problem: int, N: int, rng: np.random.Generator) -> JointDataset:
    """x ~ U[-3, 3] with y = tanh(x) + g, tanh(x + g) or g * tanh(x)."""
    if problem not in SYNTHETIC_IDS:
        raise ConfigurationError(f'synthetic problem must be one of {SYNTHETIC_IDS}, got {problem!r}')
    if N < 1:
        raise ConfigurationError(f'N must be >= 1, got {N}')
    x = rng.uniform(*X_RANGE, size=N)
    if problem == 4:
        y = np.tanh(x) + rng.gamma(GAMMA_SHAPE, GAMMA_SCALE, size=N)
    elif problem == 5:
        y = np.tanh(x + rng.normal(0.0, np.sqrt(INNER_NOISE_VARIANCE), size=N))
    else:
        y = rng.gamma(GAMMA_SHAPE, GAMMA_SCALE, size=N) * np.tanh(x)
    return JointDataset(x[:, None], y[:, None], f'synthetic-{problem}')


def gen_banana(N: int, rng: np.random.Generator, reverse_order: bool = False) -> JointDataset:
    """y1 ~ N(0, 1), y2 = y1^2 + 1 + 0.5 eps; columns swapped when ``reverse_order``."""
    if N < 1:
        raise ConfigurationError(f'N must be >= 1, got {N}')
    y1 = rng.standard_normal(N)
    y2 = y1 ** 2 + 1.0 + 0.5 * rng.standard_normal(N)
    y = np.column_stack([y2, y1] if reverse_order else [y1, y2])
    return JointDataset(np.zeros((N, 0)), y, 'banana', params={'reverse_order': reverse_order})


# ----------------------------------------------------------------------
# Biochemical oxygen demand
# ----------------------------------------------------------------------
def bod_parameters(rho) -> tuple[np.ndarray, np.ndarray]:
    """Prior transforms A = 0.4 + 0.4 (1 + erf(rho1/sqrt2)), B = 0.01 + 0.15 (1 + erf(rho2/sqrt2))."""
    rho = np.asarray(rho, dtype=np.float64)
    A = 0.4 + 0.4 * (1.0 + erf(rho[..., 0] / np.sqrt(2.0)))
    B = 0.01 + 0.15 * (1.0 + erf(rho[..., 1] / np.sqrt(2.0)))
    return A, B


def bod_forward(rho, rng: np.random.Generator | None = None, noisy: bool = False) -> np.ndarray:
    """Observations A (1 - exp(-B t)) at t = 1..5, optionally with N(0, 1e-3) noise."""
    A, B = bod_parameters(rho)
    x = A[..., None] * (1.0 - np.exp(-B[..., None] * BOD_TIMES))
    if noisy:
        if rng is None:
            raise ConfigurationError('noisy BOD observations need an rng')
        x = x + rng.normal(0.0, np.sqrt(BOD_NOISE_VARIANCE), size=x.shape)
    return x


def gen_bod(N: int, rng: np.random.Generator) -> JointDataset:
    if N < 1:
        raise ConfigurationError(f'N must be >= 1, got {N}')
    rho = rng.standard_normal((N, 2))
    return JointDataset(bod_forward(rho, rng, noisy=True), rho, 'bod')


# ----------------------------------------------------------------------
# Darcy flow
# ----------------------------------------------------------------------
def disk_inclusion(s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
    """Omega_B: closed disk of radius 0.25 centred at (0.5, 0.5)."""
    return (s1 - 0.5) ** 2 + (s2 - 0.5) ** 2 <= 0.25 ** 2


def default_observation_points() -> list[tuple[float, float]]:
    return [(i / 5.0, j / 5.0) for i in range(1, 5) for j in range(1, 5)]


@dataclass
class DarcyGrid:
    """Uniform grid on [0, 1]^2 with ``interior_points`` unknowns per axis, h = 1/(G+1)."""

    interior_points: int = 63
    forcing: float | Callable[[np.ndarray, np.ndarray], np.ndarray] = 1.0
    inclusion: Callable[[np.ndarray, np.ndarray], np.ndarray] = disk_inclusion
    tolerance: float = 1e-10
    solver: str = 'cg'
    max_iterations: int | None = None
    observation_points: list[tuple[float, float]] = field(default_factory=default_observation_points)

    def __post_init__(self):
        errors = []
        if self.interior_points < 1:
            errors.append(f'interior_points must be >= 1, got {self.interior_points}')
        if not self.tolerance > 0:
            errors.append('solver tolerance must be > 0')
        if self.solver not in ('cg', 'direct'):
            errors.append(f"solver must be 'cg' or 'direct', got {self.solver!r}")
        if errors:
            raise ConfigurationError.from_errors('Invalid Darcy grid', errors)

    @property
    def h(self) -> float:
        return 1.0 / (self.interior_points + 1)

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates 0, h, ..., 1 along one axis (boundary included)."""
        return np.linspace(0.0, 1.0, self.interior_points + 2)

    def permeability(self, A: float, B: float) -> np.ndarray:
        s1, s2 = np.meshgrid(self.nodes, self.nodes, indexing='ij')
        return np.where(self.inclusion(s1, s2), B, A)

    def forcing_values(self) -> np.ndarray:
        inner = self.nodes[1:-1]
        if callable(self.forcing):
            s1, s2 = np.meshgrid(inner, inner, indexing='ij')
            return np.asarray(self.forcing(s1, s2), dtype=np.float64)
        return np.full((self.interior_points, self.interior_points), float(self.forcing))

    def observation_indices(self) -> list[tuple[int, int]]:
        """Interior-array indices of the grid nodes nearest to each observation point."""
        G = self.interior_points
        indices = []
        for s1, s2 in self.observation_points:
            i, j = int(round(s1 / self.h)), int(round(s2 / self.h))
            if not (1 <= i <= G and 1 <= j <= G):
                raise ConfigurationError(f'observation point ({s1}, {s2}) does not fall on an interior grid node')
            indices.append((i - 1, j - 1))
        return indices


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def darcy_operator(A: float, B: float, grid: DarcyGrid) -> sp.csr_matrix:
    """Five-point stencil for -div(a grad p) with harmonic face averages and p = 0 on the boundary."""
    G, h2 = grid.interior_points, grid.h ** 2
    a = grid.permeability(A, B)
    ax = _harmonic(a[:-1, :], a[1:, :])
    ay = _harmonic(a[:, :-1], a[:, 1:])
    west = ax[0:G, 1:G + 1]
    east = ax[1:G + 1, 1:G + 1]
    south = ay[1:G + 1, 0:G]
    north = ay[1:G + 1, 1:G + 1]

    idx = np.arange(G * G).reshape(G, G)
    rows = [idx.ravel(), idx[:-1, :].ravel(), idx[1:, :].ravel(), idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    cols = [idx.ravel(), idx[1:, :].ravel(), idx[:-1, :].ravel(), idx[:, 1:].ravel(), idx[:, :-1].ravel()]
    vals = [
        ((west + east + south + north) / h2).ravel(),
        (-east[:-1, :] / h2).ravel(),
        (-west[1:, :] / h2).ravel(),
        (-north[:, :-1] / h2).ravel(),
        (-south[:, 1:] / h2).ravel(),
    ]
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(G * G, G * G)
    )


def darcy_solve(A: float, B: float, grid: DarcyGrid) -> np.ndarray:
    """Pressure at the interior nodes, ``p[i-1, j-1]`` at ``(i h, j h)``."""
    if not (A > 0 and B > 0):
        raise DomainError(f'permeabilities must be positive, got A={A}, B={B}')
    G = grid.interior_points
    matrix = darcy_operator(A, B, grid)
    rhs = grid.forcing_values().ravel()
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros((G, G))

    if grid.solver == 'direct':
        pressure = spla.spsolve(matrix.tocsc(), rhs)
    else:
        jacobi = sp.diags(1.0 / matrix.diagonal())
        pressure, info = spla.cg(
            matrix, rhs, rtol=grid.tolerance / 10.0, atol=0.0, M=jacobi, maxiter=grid.max_iterations
        )
        if info != 0:
            residual = np.linalg.norm(rhs - matrix @ pressure) / rhs_norm
            raise NumericalError(f'conjugate gradients stopped without converging (info={info})', residual=residual)

    residual = np.linalg.norm(rhs - matrix @ pressure) / rhs_norm
    logger.debug('darcy solve A=%g B=%g G=%d residual=%.2e', A, B, G, residual)
    if residual > grid.tolerance:
        raise NumericalError('Darcy solve missed its residual tolerance', residual=residual)
    return pressure.reshape(G, G)


def darcy_observe(
    pressure: np.ndarray,
    grid: DarcyGrid,
    rng: np.random.Generator | None = None,
    noisy: bool = False,
) -> np.ndarray:
    """Pressure at the observation nodes, plus N(0, 1e-7) noise per entry when ``noisy``."""
    pressure = np.asarray(pressure, dtype=np.float64)
    G = grid.interior_points
    if pressure.shape != (G, G):
        raise ConfigurationError(f'pressure field has shape {pressure.shape}, grid expects {(G, G)}')
    x = np.array([pressure[i, j] for i, j in grid.observation_indices()])
    if noisy:
        if rng is None:
            raise ConfigurationError('noisy Darcy observations need an rng')
        x = x + rng.normal(0.0, np.sqrt(DARCY_NOISE_VARIANCE), size=x.shape)
    return x


def darcy_forward(A: float, B: float, grid: DarcyGrid) -> np.ndarray:
    """Noiseless observation vector for permeabilities (A, B)."""
    return darcy_observe(darcy_solve(A, B, grid), grid)


def gen_darcy(N: int, rng: np.random.Generator, grid: DarcyGrid | None = None) -> JointDataset:
    """y = (A, B) ~ U(3, 5) x U(12, 16); x = noisy pressure observations. Solves run on a thread pool."""
    if N < 1:
        raise ConfigurationError(f'N must be >= 1, got {N}')
    grid = grid or DarcyGrid()
    y = np.column_stack([rng.uniform(*DARCY_A_RANGE, size=N), rng.uniform(*DARCY_B_RANGE, size=N)])
    noise = rng.normal(0.0, np.sqrt(DARCY_NOISE_VARIANCE), size=(N, len(grid.observation_points)))
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        clean = list(pool.map(lambda row: darcy_forward(row[0], row[1], grid), y))
    x = np.vstack(clean) + noise
    return JointDataset(x, y, 'darcy', params={'interior_points': grid.interior_points})


def generate(problem: str, N: int, seed: int, params: dict | None = None) -> JointDataset:
    """Dispatch on a problem id from :data:`PROBLEMS`."""
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if problem.startswith('synthetic-'):
        try:
            problem_id = int(problem.split('-', 1)[1])
        except ValueError:
            raise ConfigurationError(f'unknown problem {problem!r}') from None
        dataset = gen_synthetic(problem_id, N, rng)
    elif problem == 'banana':
        dataset = gen_banana(N, rng, bool(params.get('reverse_order', False)))
    elif problem == 'bod':
        dataset = gen_bod(N, rng)
    elif problem == 'darcy':
        grid = DarcyGrid(interior_points=int(params.get('interior_points', 63)))
        dataset = gen_darcy(N, rng, grid)
    else:
        raise ConfigurationError(f'unknown problem {problem!r}; expected one of {PROBLEMS}')
    dataset.seed = seed
    dataset.params = {**dataset.params, **params}
    logger.info('generated %s dataset: N=%d n=%d m=%d seed=%d', problem, len(dataset), dataset.n, dataset.m, seed)
    return dataset
