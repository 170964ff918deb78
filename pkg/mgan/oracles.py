"""Ground truth: analytic conditionals and KR maps for the tanh problems, the
banana density, and random-walk Metropolis for the BOD and Darcy posteriors.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri
from scipy.stats import norm

from mgan.errors import ConfigurationError
from mgan.problems import (
    BOD_NOISE_VARIANCE,
    BOD_TIMES,
    DARCY_A_RANGE,
    DARCY_B_RANGE,
    DARCY_NOISE_VARIANCE,
    GAMMA_SCALE,
    INNER_NOISE_VARIANCE,
    SYNTHETIC_IDS,
    X_RANGE,
    DarcyGrid,
    bod_parameters,
    darcy_forward,
)
from mgan.transport import push_forward

logger = logging.getLogger(__name__)

INNER_NOISE_STD = np.sqrt(INNER_NOISE_VARIANCE)
BOD_LIKELIHOOD_WEIGHT = 1.0 / (2.0 * BOD_NOISE_VARIANCE)
DARCY_LIKELIHOOD_WEIGHT = 1.0 / (2.0 * DARCY_NOISE_VARIANCE)
TARGET_ACCEPTANCE = (0.25, 0.45)


def synthetic_id(problem) -> int:
    """Accept 4, '4' or 'synthetic-4'."""
    text = str(problem)
    if text.startswith('synthetic-'):
        text = text.split('-', 1)[1]
    try:
        value = int(text)
    except ValueError:
        value = None
    if value not in SYNTHETIC_IDS:
        raise ConfigurationError(f'no analytic conditional for problem {problem!r}')
    return value


def degenerate_mask(problem, x) -> np.ndarray:
    """True where the conditional collapses to a point mass (problem 6 at x = 0)."""
    x = np.asarray(x, dtype=np.float64)
    if synthetic_id(problem) != 6:
        return np.zeros(x.shape, dtype=bool)
    return np.tanh(x) == 0.0


def kr_map(problem, x, u) -> np.ndarray:
    """Monotone conditional-quantile map y = Q_{y|x}(Phi(u)); zero on the degenerate set."""
    pid = synthetic_id(problem)
    x, u = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(u, dtype=np.float64))
    t = np.tanh(x)
    if pid == 4:
        return t - GAMMA_SCALE * log_ndtr(-u)
    if pid == 5:
        return np.tanh(x + INNER_NOISE_STD * u)
    upper = -GAMMA_SCALE * log_ndtr(-u)
    lower = -GAMMA_SCALE * log_ndtr(u)
    y = np.where(t > 0, t * upper, t * lower)
    degenerate = t == 0.0
    if np.any(degenerate):
        logger.debug('kr_map: %d degenerate evaluations at x = 0', int(np.sum(degenerate)))
    return np.where(degenerate, 0.0, y)


class AnalyticConditional:
    """pi(y | x), its CDF and quantile function, and the joint density for one tanh problem."""

    def __init__(self, problem):
        self.problem = synthetic_id(problem)

    def pdf(self, y, x) -> np.ndarray:
        y, x = np.broadcast_arrays(np.asarray(y, dtype=np.float64), np.asarray(x, dtype=np.float64))
        t = np.tanh(x)
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            if self.problem == 4:
                r = y - t
                return np.where(r >= 0, np.exp(-np.maximum(r, 0) / GAMMA_SCALE) / GAMMA_SCALE, 0.0)
            if self.problem == 5:
                inside = np.abs(y) < 1.0
                yc = np.where(inside, y, 0.0)
                v = (np.arctanh(yc) - x) / INNER_NOISE_STD
                return np.where(inside, norm.pdf(v) / (INNER_NOISE_STD * (1.0 - yc ** 2)), 0.0)
            scale = GAMMA_SCALE * np.abs(t)
            r = np.where(t != 0, y / np.where(t != 0, t, 1.0), -1.0)
            density = np.where(r >= 0, np.exp(-np.maximum(r, 0) / GAMMA_SCALE) / np.where(t != 0, scale, 1.0), 0.0)
            return np.where(t == 0, 0.0, density)

    def cdf(self, y, x) -> np.ndarray:
        y, x = np.broadcast_arrays(np.asarray(y, dtype=np.float64), np.asarray(x, dtype=np.float64))
        t = np.tanh(x)
        with np.errstate(divide='ignore', invalid='ignore'):
            if self.problem == 4:
                r = y - t
                return np.where(r >= 0, -np.expm1(-np.maximum(r, 0) / GAMMA_SCALE), 0.0)
            if self.problem == 5:
                yc = np.clip(y, -1.0, 1.0)
                v = (np.arctanh(yc) - x) / INNER_NOISE_STD
                return np.where(y >= 1.0, 1.0, np.where(y <= -1.0, 0.0, ndtr(v)))
            safe_t = np.where(t != 0, t, 1.0)
            positive = np.where(y >= 0, -np.expm1(-np.maximum(y, 0) / (GAMMA_SCALE * safe_t)), 0.0)
            negative = np.where(y < 0, np.exp(-np.maximum(y / safe_t, 0) / GAMMA_SCALE), 1.0)
            point_mass = (y >= 0).astype(np.float64)
            return np.where(t > 0, positive, np.where(t < 0, negative, point_mass))

    def quantile(self, p, x) -> np.ndarray:
        p, x = np.broadcast_arrays(np.asarray(p, dtype=np.float64), np.asarray(x, dtype=np.float64))
        t = np.tanh(x)
        if self.problem == 4:
            return t - GAMMA_SCALE * np.log1p(-p)
        if self.problem == 5:
            return np.tanh(x + INNER_NOISE_STD * ndtri(p))
        with np.errstate(divide='ignore'):
            return np.where(t > 0, -t * GAMMA_SCALE * np.log1p(-p), np.where(t < 0, -t * GAMMA_SCALE * np.log(p), 0.0))

    def joint_pdf(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        inside = (x >= X_RANGE[0]) & (x <= X_RANGE[1])
        width = X_RANGE[1] - X_RANGE[0]
        return np.where(inside, self.pdf(y, x) / width, 0.0)


class KrTransportMap:
    """The analytic KR map packaged with the transport-map interface (n = m = 1)."""

    kind = 'analytic'
    n = 1
    m = 1
    scaler = None

    def __init__(self, problem):
        self.problem = synthetic_id(problem)

    def transform(self, batch) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        return kr_map(self.problem, batch[:, 0], batch[:, 1])[:, None]


def banana_density(y) -> np.ndarray:
    """N(y1; 0, 1) * N(y2; y1^2 + 1, 0.5^2) on rows of y."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return norm.pdf(y[:, 0]) * norm.pdf(y[:, 1], loc=y[:, 0] ** 2 + 1.0, scale=0.5)


def true_joint_density(problem, x, y) -> np.ndarray:
    """Joint density of a tanh problem at (x, y), or of the banana at rows ``y`` (x unused)."""
    if problem == 'banana':
        return banana_density(y)
    return AnalyticConditional(problem).joint_pdf(x, y)


def kr_map_error_grid(problem, T, resolution: int = 101, bounds=X_RANGE) -> dict[str, np.ndarray]:
    """KR map, learned map and absolute error on a regular (x, u) grid."""
    axis = np.linspace(bounds[0], bounds[1], resolution)
    xx, uu = np.meshgrid(axis, axis, indexing='ij')
    x, u = xx.ravel(), uu.ravel()
    truth = kr_map(problem, x, u)
    learned = push_forward(T, x[:, None], u[:, None])[:, 0]
    return {
        'x': x,
        'u': u,
        'kr': truth,
        'learned': learned,
        'abs_error': np.abs(learned - truth),
        'degenerate': degenerate_mask(problem, x).astype(np.float64),
    }


# ----------------------------------------------------------------------
# Posteriors
# ----------------------------------------------------------------------
def bod_log_posterior(rho, x_star) -> float:
    """-500 * sum_j (x*_j - B(j; rho))^2 - |rho|^2 / 2, unnormalized."""
    rho = np.asarray(rho, dtype=np.float64)
    A, B = bod_parameters(rho)
    model = A * (1.0 - np.exp(-B * BOD_TIMES))
    residual = np.asarray(x_star, dtype=np.float64) - model
    return float(-BOD_LIKELIHOOD_WEIGHT * np.sum(residual ** 2) - 0.5 * np.sum(rho ** 2))


def bod_log_posterior_grad(rho, x_star) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.float64)
    A, B = bod_parameters(rho)
    decay = np.exp(-B * BOD_TIMES)
    residual = np.asarray(x_star, dtype=np.float64) - A * (1.0 - decay)
    dA = 0.4 * np.sqrt(2.0 / np.pi) * np.exp(-0.5 * rho[0] ** 2)
    dB = 0.15 * np.sqrt(2.0 / np.pi) * np.exp(-0.5 * rho[1] ** 2)
    weight = 2.0 * BOD_LIKELIHOOD_WEIGHT
    return np.array([
        weight * np.sum(residual * (1.0 - decay)) * dA - rho[0],
        weight * np.sum(residual * A * BOD_TIMES * decay) * dB - rho[1],
    ])


def darcy_log_posterior(params, x_star, grid: DarcyGrid) -> float:
    """Uniform prior box times the Gaussian observation likelihood; -inf outside the box."""
    A, B = (float(v) for v in params)
    if not (DARCY_A_RANGE[0] <= A <= DARCY_A_RANGE[1] and DARCY_B_RANGE[0] <= B <= DARCY_B_RANGE[1]):
        return -np.inf
    residual = np.asarray(x_star, dtype=np.float64) - darcy_forward(A, B, grid)
    return float(-DARCY_LIKELIHOOD_WEIGHT * np.sum(residual ** 2))


# ----------------------------------------------------------------------
# Random-walk Metropolis
# ----------------------------------------------------------------------
@dataclass
class McmcConfig:
    log_posterior: Callable[[np.ndarray], float]
    initial_state: np.ndarray
    proposal_std: float | np.ndarray
    chain_length: int = 30_000
    burn_in: int = 5_000
    seed: int = 0

    def validate(self) -> list[str]:
        errors = []
        if self.chain_length < 1:
            errors.append(f'chain_length must be >= 1, got {self.chain_length}')
        if self.burn_in < 0:
            errors.append(f'burn_in must be >= 0, got {self.burn_in}')
        if np.any(np.asarray(self.proposal_std) <= 0):
            errors.append('proposal_std must be positive')
        return errors


@dataclass
class McmcResult:
    chain: np.ndarray
    acceptance_rate: float
    proposal_std: np.ndarray


def mcmc_sample(config: McmcConfig) -> McmcResult:
    """Random-walk Metropolis with Gaussian proposals; burn-in is discarded."""
    errors = config.validate()
    if errors:
        raise ConfigurationError.from_errors('Invalid MCMC config', errors)
    state = np.atleast_1d(np.asarray(config.initial_state, dtype=np.float64)).copy()
    dim = state.shape[0]
    std = np.broadcast_to(np.asarray(config.proposal_std, dtype=np.float64), (dim,)).copy()
    current = config.log_posterior(state)
    if not np.isfinite(current):
        raise ConfigurationError(f'log-posterior is not finite at the initial state {state.tolist()}')

    rng = np.random.default_rng(config.seed)
    total = config.burn_in + config.chain_length
    steps = rng.standard_normal((total, dim)) * std
    log_u = np.log(rng.uniform(size=total))
    chain = np.empty((config.chain_length, dim))
    accepted = 0
    for t in range(total):
        proposal = state + steps[t]
        candidate = config.log_posterior(proposal)
        if log_u[t] < candidate - current:
            state, current = proposal, candidate
            accepted += 1
        if t >= config.burn_in:
            chain[t - config.burn_in] = state
    rate = accepted / total
    logger.info('mcmc: %d steps, acceptance rate %.3f, proposal std %s', total, rate, std.tolist())
    return McmcResult(chain, rate, std)


def tune_proposal(
    log_posterior: Callable[[np.ndarray], float],
    initial_state,
    initial_std,
    seed: int = 0,
    pilot_length: int = 1_000,
    max_rounds: int = 20,
    target: tuple[float, float] = TARGET_ACCEPTANCE,
) -> tuple[np.ndarray, np.ndarray]:
    """Rescale the proposal std with short pilot chains until acceptance lands in ``target``.

    Returns ``(proposal_std, state)`` where ``state`` is the last pilot state.
    """
    state = np.atleast_1d(np.asarray(initial_state, dtype=np.float64))
    std = np.broadcast_to(np.asarray(initial_std, dtype=np.float64), state.shape).copy()
    midpoint = 0.5 * (target[0] + target[1])
    for round_index in range(max_rounds):
        pilot = mcmc_sample(McmcConfig(log_posterior, state, std, pilot_length, 0, seed + round_index))
        state = pilot.chain[-1]
        rate = pilot.acceptance_rate
        if target[0] <= rate <= target[1]:
            break
        std = std * float(np.clip(rate / midpoint, 0.1, 3.0))
    logger.info('tuned proposal std %s after %d pilot rounds', std.tolist(), round_index + 1)
    return std, state
