"""Learning-rate calculators, bound evaluators and Monte-Carlo audits.

The rate plans evaluate the closed-form global/local learning rates for the
heterogeneous (nIID) and homogeneous (IID) settings, check the step-size
conditions under a delay bound lambda, and report the right-hand side of the
average squared gradient norm bound at the horizon.

Constants estimated from data problems are estimates, not certified bounds.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from defedavg.errors import ProblemError
from defedavg.models.metrics import RunResult
from defedavg.models.policy import AlgorithmKind
from defedavg.models.run_config import RunConfig
from defedavg.models.state import LocalUpdate
from defedavg.services.algorithm_service import sample_with_replacement
from defedavg.services.numerics_service import RngStream, derive_stream
from defedavg.services.problem_service import Problem, QuadraticProblem

logger = logging.getLogger(__name__)

MC_CHUNK = 10000
SE_BAND = 4.0


@dataclass(frozen=True)
class ProblemConstants:
    L: float
    sigma: float
    G: float = 0.0
    nu: float = 0.0
    gap: float = 1.0
    estimated: bool = False

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError(f'smoothness L must be positive, got {self.L}')
        for name in ('sigma', 'G', 'nu'):
            if getattr(self, name) < 0:
                raise ValueError(f'{name} must be nonnegative, got {getattr(self, name)}')


@dataclass(frozen=True)
class Condition:
    name: str
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs

    @property
    def slack(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else math.inf


@dataclass(frozen=True)
class RatePlan:
    setting: str
    eta: float
    eta_bar: float
    conditions: Tuple[Condition, ...]
    bound_at_T: float
    T: int
    lam: int

    @property
    def conditions_satisfied(self) -> bool:
        return all(c.holds for c in self.conditions)

    @property
    def binding_constraint(self) -> str:
        """First violated condition, or the tightest one when all hold."""
        violated = [c for c in self.conditions if not c.holds]
        if violated:
            return violated[0].name
        return max(self.conditions, key=lambda c: c.slack).name

    def to_dict(self) -> dict:
        return {
            'setting': self.setting,
            'eta': self.eta,
            'eta_bar': self.eta_bar,
            'conditions_satisfied': self.conditions_satisfied,
            'binding_constraint': self.binding_constraint,
            'bound_at_T': self.bound_at_T,
            'T': self.T,
            'lambda': self.lam,
        }


def _check_plan_inputs(constants: ProblemConstants, T: int, lam: int) -> None:
    if T < 1:
        raise ValueError(f'horizon T must be at least 1, got {T}')
    if lam < 1:
        raise ValueError(f'delay bound lambda must be at least 1, got {lam}')
    if constants.gap < 0:
        raise ProblemError(f'initial optimality gap must be nonnegative, got {constants.gap}')


def niid_rates(n: int, K: int, constants: ProblemConstants, T: int, lam: int = 1) -> RatePlan:
    _check_plan_inputs(constants, T, lam)
    L, s2, G2, nu2 = constants.L, constants.sigma ** 2, constants.G ** 2, constants.nu ** 2
    noise = 4 * s2 * L + 2 * L * K * G2
    if s2 == 0:
        raise ProblemError('sigma = 0 leaves the local rate formula without its noise scale; use rates = preset or manual')
    eta = math.sqrt(4 * n * K * constants.gap)
    eta_bar = 1.0 / (math.sqrt(noise * T) * K)
    product_limit = min(
        1.0 / (4 * L * K * lam),
        (2 * s2 + G2 * K) / (8 * s2 * L * K * lam + 4 * L * G2 * K ** 2 * lam ** 2),
    )
    conditions = (
        Condition('eta_bar <= 1/(8*L*K)', eta_bar, 1.0 / (8 * L * K)),
        Condition('eta*eta_bar <= min{1/(4*L*K*lambda), (2*sigma^2+G^2*K)/(8*sigma^2*L*K*lambda+4*L*G^2*K^2*lambda^2)}',
                  eta * eta_bar, product_limit),
    )
    bound = (math.sqrt(256 * constants.gap * (16 * s2 * L + 8 * L * G2 * K) / (n * K * T))
             + (s2 + 8 * K * nu2) * 8 * L ** 2 / (noise * K * T))
    return RatePlan('niid', eta, eta_bar, conditions, bound, T, lam)


def iid_rates(n: int, K: int, constants: ProblemConstants, T: int, lam: int = 1) -> RatePlan:
    _check_plan_inputs(constants, T, lam)
    L, s2 = constants.L, constants.sigma ** 2
    if s2 == 0:
        raise ProblemError('sigma = 0 makes the local rate formula divide by zero; use rates = preset or manual')
    eta = math.sqrt(n * K * constants.gap / 2)
    eta_bar = 1.0 / (math.sqrt(s2 * L * T) * K)
    conditions = (
        Condition('eta_bar <= 1/(4*sqrt(3)*L*K)', eta_bar, 1.0 / (4 * math.sqrt(3) * L * K)),
        Condition('eta*eta_bar <= 1/(4*L*K*lambda)', eta * eta_bar, 1.0 / (4 * L * K * lam)),
    )
    bound = math.sqrt(128 * constants.gap / (n * K * T)) + 8 * L / (K * T)
    return RatePlan('iid', eta, eta_bar, conditions, bound, T, lam)


def lambda_bound(num_clients: int, n: int, T: int, delta: float) -> int:
    """Heuristic high-probability delay bound with the O-constant set to 1."""
    if not 0 < delta < 1:
        raise ValueError(f'delta must lie in (0, 1), got {delta}')
    if num_clients < 1 or n < 1 or T < 1:
        raise ValueError('N, n and T must be positive')
    p = 1.0 - ((num_clients - 1) / num_clients) ** n
    return int(math.ceil((1.0 + math.log(num_clients * T / delta)) / p))


def estimate_constants(problem: Problem, probe_points: int, samples_per_point: int, rng: RngStream,
                       batch: int = 1, radius: float = 1.0) -> ProblemConstants:
    """Empirical L, sigma, G, nu and gap around the initial model.

    Probes are w0 plus random directions of length up to ``radius``. The gap
    uses F* when the problem knows it, otherwise F(w0) (losses are nonnegative).
    """
    if probe_points < 1 or samples_per_point < 1:
        raise ValueError('probe_points and samples_per_point must be at least 1')
    w0 = problem.initial_weights()
    probes = [w0]
    for _ in range(probe_points - 1):
        direction = rng.normal(size=problem.dim)
        probes.append(w0 + radius * rng.uniform(0.0, 1.0) * direction / np.linalg.norm(direction))

    sigma2 = g2 = nu2 = 0.0
    smoothness = 0.0
    for p in probes:
        grads = np.array([problem.client_gradient(i, p) for i in range(problem.num_clients)])
        full = grads.mean(axis=0)
        g2 = max(g2, float(np.max(np.sum(grads ** 2, axis=1))))
        nu2 = max(nu2, float(np.max(np.sum((grads - full) ** 2, axis=1))))

        clients = rng.integers(problem.num_clients, size=samples_per_point)
        total = 0.0
        for c in clients:
            noise = problem.stochastic_gradient(int(c), p, batch, rng) - grads[c]
            total += float(noise @ noise)
        sigma2 = max(sigma2, total / samples_per_point)

        step = rng.normal(size=problem.dim)
        q = p + 0.1 * radius * step / np.linalg.norm(step)
        distance = float(np.linalg.norm(q - p))
        for i in range(problem.num_clients):
            ratio = float(np.linalg.norm(problem.client_gradient(i, q) - grads[i])) / distance
            smoothness = max(smoothness, ratio)

    f0 = problem.loss(w0)
    gap = f0 - problem.known_optimum.f_star if problem.known_optimum else f0
    constants = ProblemConstants(
        L=smoothness if smoothness > 0 else 1.0,
        sigma=math.sqrt(sigma2), G=math.sqrt(g2), nu=math.sqrt(nu2), gap=max(gap, 0.0), estimated=True,
    )
    logger.info(f'Estimated constants (not certified): {constants}')
    return constants


def problem_constants(problem: Problem, seed: int, probe_points: int = 4, samples_per_point: int = 200) -> ProblemConstants:
    """Exact constants where the problem exposes them, estimates elsewhere."""
    estimate = estimate_constants(problem, probe_points, samples_per_point, derive_stream(seed, 'theory/constants'))
    if not isinstance(problem, QuadraticProblem):
        return estimate
    w0 = problem.initial_weights()
    return ProblemConstants(
        L=problem.smoothness, sigma=problem.noise_sigma, G=estimate.G, nu=problem.hetero_nu,
        gap=problem.loss(w0) - problem.known_optimum.f_star, estimated=False,
    )


def plan_for(config: RunConfig, constants: ProblemConstants) -> RatePlan:
    horizon = config.horizon or config.T
    if config.algorithm in (AlgorithmKind.DEFEDAVG_IID, AlgorithmKind.ASYSG):
        K = 1 if config.algorithm is AlgorithmKind.ASYSG else config.K
        return iid_rates(config.n, K, constants, horizon, config.lam)
    return niid_rates(config.n, config.K, constants, horizon, config.lam)


def resolve_rates(config: RunConfig, problem: Problem) -> RunConfig:
    plan = plan_for(config, problem_constants(problem, config.seed))
    if not plan.conditions_satisfied:
        logger.warning(f'Theorem rates violate {plan.binding_constraint} (lambda={config.lam})')
    logger.info(f'Theorem rates ({plan.setting}): eta={plan.eta:.6g} eta_bar={plan.eta_bar:.6g}')
    if config.algorithm is AlgorithmKind.ASYSG:
        # the single AsySG rate is the product of the global and local rates
        return config.with_overrides(eta=plan.eta * plan.eta_bar)
    return config.with_overrides(eta=plan.eta, eta_bar=plan.eta_bar)


@dataclass
class UnbiasednessReport:
    passed: bool
    trials: int
    max_z: float
    mc_mean: np.ndarray
    exact_mean: np.ndarray
    standard_error: np.ndarray

    def to_dict(self) -> dict:
        return {'passed': self.passed, 'trials': self.trials, 'max_z': self.max_z,
                'max_abs_error': float(np.max(np.abs(self.mc_mean - self.exact_mean)))}


Sampler = Callable[[int, int, int, RngStream], np.ndarray]


def uniform_sampler(num_clients: int, n: int, trials: int, rng: RngStream) -> np.ndarray:
    return rng.integers(num_clients, size=(trials, n))


def mc_unbiasedness_check(deltas: Union[Sequence[LocalUpdate], np.ndarray], n: int, trials: int, rng: RngStream,
                          sampler: Optional[Sampler] = None) -> UnbiasednessReport:
    """Monte-Carlo mean of the sampled aggregate against the exact client average."""
    if trials < 1000:
        raise ValueError(f'unbiasedness check needs at least 1000 trials, got {trials}')
    matrix = np.array([u.delta for u in deltas]) if not isinstance(deltas, np.ndarray) else deltas
    num_clients = matrix.shape[0]
    sampler = sampler or uniform_sampler
    total = np.zeros(matrix.shape[1])
    total_sq = np.zeros(matrix.shape[1])
    done = 0
    while done < trials:
        chunk = min(MC_CHUNK, trials - done)
        idx = sampler(num_clients, n, chunk, rng)
        aggregates = matrix[idx].mean(axis=1)
        total += aggregates.sum(axis=0)
        total_sq += (aggregates ** 2).sum(axis=0)
        done += chunk
    mean = total / trials
    variance = np.maximum(total_sq / trials - mean ** 2, 0.0)
    se = np.sqrt(variance / trials)
    exact = matrix.mean(axis=0)
    error = np.abs(mean - exact)
    tolerance = SE_BAND * se + 1e-12 * (1.0 + np.abs(exact))
    z = np.where(se > 0, error / np.where(se > 0, se, 1.0), 0.0)
    return UnbiasednessReport(bool(np.all(error <= tolerance)), trials, float(np.max(z)), mean, exact, se)


@dataclass
class VarianceReport:
    passed: bool
    trivial: bool
    empirical: float
    standard_error: float
    reference: float
    bound: float
    n: int
    K: int
    sigma: float

    def to_dict(self) -> dict:
        return asdict(self)


def mc_variance_check(problem: QuadraticProblem, n: int, K: int, trials: int, rng: RngStream,
                      eta_bar: float = 0.05) -> VarianceReport:
    """Empirical E||sum_{j in I} sum_k (g_j(w_j^k) - grad F_j(w_j^k))||^2 over sampled multisets I.

    Each trial samples I with replacement and runs K local SGD steps per element
    through the stochastic oracle, stacked one row per (trial, element).
    """
    sigma = problem.noise_sigma
    if sigma is None:
        raise ProblemError('variance check needs a problem with an exact noise level')
    reference = n * K * sigma ** 2
    bound = 2 * reference
    if sigma == 0:
        return VarianceReport(True, True, 0.0, 0.0, 0.0, 0.0, n, K, 0.0)
    w0 = problem.initial_weights()
    total = total_sq = 0.0
    done = 0
    chunk_size = max(1, MC_CHUNK // n)
    while done < trials:
        chunk = min(chunk_size, trials - done)
        stream = rng.child(f'chunk/{done}')
        clients = sample_with_replacement(problem.num_clients, chunk * n, stream)
        w = np.tile(w0, (clients.size, 1))
        error = np.zeros_like(w)
        for _ in range(K):
            g = problem.stochastic_gradient(clients, w, 1, stream)
            error += g - problem.client_gradient(clients, w)
            w = w - eta_bar * g
        norms = np.sum(error.reshape(chunk, n, problem.dim).sum(axis=1) ** 2, axis=1)
        total += float(norms.sum())
        total_sq += float((norms ** 2).sum())
        done += chunk
    mean = total / trials
    se = math.sqrt(max(total_sq / trials - mean ** 2, 0.0) / trials)
    passed = abs(mean - reference) <= SE_BAND * se and mean <= bound + SE_BAND * se
    return VarianceReport(bool(passed), False, mean, se, reference, bound, n, K, sigma)


@dataclass
class FairnessReport:
    passed: bool
    counts: List[int]
    statistic: float
    p_value: float
    alpha: float

    def to_dict(self) -> dict:
        return asdict(self)


def participation_fairness_check(result: RunResult, num_clients: int, alpha: float = 1e-3) -> FairnessReport:
    """Chi-square test of per-client selection counts against the uniform distribution."""
    counts = result.selection_counts(num_clients)
    if counts.sum() == 0:
        raise ValueError('no participation recorded')
    statistic, p_value = stats.chisquare(counts)
    return FairnessReport(bool(p_value >= alpha), counts.tolist(), float(statistic), float(p_value), alpha)


@dataclass
class BiasReport:
    correlation: float
    counts: List[int] = field(default_factory=list)
    speed_factors: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def speed_bias_witness(result: RunResult) -> BiasReport:
    """Pearson correlation between participation counts and speed factors (larger factor = slower)."""
    speeds = np.asarray(result.speed_factors, dtype=np.float64)
    counts = result.selection_counts(speeds.size)
    if np.std(counts) == 0 or np.std(speeds) == 0:
        correlation = 0.0
    else:
        correlation = float(np.corrcoef(counts, speeds)[0, 1])
    return BiasReport(correlation, counts.tolist(), speeds.tolist())
