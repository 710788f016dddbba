import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from defedavg.errors import DeFedAvgError
from defedavg.models.data import PartitionScheme
from defedavg.models.policy import AlgorithmKind
from defedavg.models.run_config import ProblemSpec, RunConfig, SystemSpec
from defedavg.models.state import ServerState, StampedModel, TrainingJob
from defedavg.repository.datasetRepository import DatasetRepository
from defedavg.services.algorithm_service import asysg_step, compact_oracle
from defedavg.services.numerics_service import RngStream, derive_stream, finite_difference_gradient, relative_error
from defedavg.services.partition_service import partition
from defedavg.services.problem_service import (
    ClassificationProblem, Problem, make_logreg, make_mlp, make_quadratic,
)
from defedavg.services.simulator_service import run, staleness_report
from defedavg.services.theory_service import (
    ProblemConstants, iid_rates, lambda_bound, mc_unbiasedness_check, mc_variance_check, niid_rates,
)
from defedavg.services.training_service import realize

logger = logging.getLogger(__name__)

EQUAL_SPEEDS = SystemSpec(speed_min=1.0, speed_max=1.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: Dict = field(default_factory=dict)
    seconds: float = 0.0

    def __post_init__(self):
        # numpy comparisons yield numpy.bool_, which json cannot encode
        self.passed = bool(self.passed)

    def to_dict(self) -> dict:
        return {'name': self.name, 'passed': self.passed, 'seconds': round(self.seconds, 3), **self.details}


@dataclass
class VerificationReport:
    checks: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {'passed': self.passed, 'checks': [c.to_dict() for c in self.checks]}


def _quadratic_config(T: int, N: int, n: int, K: int, sigma: float, nu: float, dim: int, seed: int,
                      algorithm: AlgorithmKind, **overrides) -> RunConfig:
    spec = ProblemSpec(kind='quadratic', N=N, dim=dim, nu=nu, sigma=sigma)
    return RunConfig(T=T, problem=spec, algorithm=algorithm, n=n, K=K, batch=1, seed=seed, **overrides)


def compact_oracle_check(N: int = 20, n: int = 5, K: int = 5, T: int = 50, seed: int = 7,
                         eta: float = 1.0, eta_bar: float = 0.05, tolerance: float = 1e-10) -> CheckResult:
    config = _quadratic_config(T, N, n, K, 1.0, 0.5, 10, seed, AlgorithmKind.DEFEDAVG_NIID,
                               eta=eta, eta_bar=eta_bar)
    problem = make_quadratic(N, 10, 0.5, 1.0, seed)
    result = run(config, problem)
    replayed = compact_oracle(result.participation_log, problem, problem.initial_weights(),
                              eta, eta_bar, n, K, T, config.batch, seed)
    diff = float(np.max(np.abs(replayed - result.final_weights)))
    return CheckResult('compact_oracle', diff <= tolerance, {'max_abs_diff': diff, 'rounds': T})


def synchronous_reduction_check(N: int = 10, n: int = 4, K: int = 3, T: int = 100, seed: int = 11,
                                tolerance: float = 1e-12) -> CheckResult:
    common = dict(eta=1.0, eta_bar=0.05, system=EQUAL_SPEEDS)
    problem = make_quadratic(N, 10, 0.5, 1.0, seed)
    fedavg = run(_quadratic_config(T, N, n, K, 1.0, 0.5, 10, seed, AlgorithmKind.FEDAVG, **common), problem)
    degenerate = run(_quadratic_config(T, N, n, K, 1.0, 0.5, 10, seed, AlgorithmKind.DEFEDAVG_NIID,
                                       synchronous=True, **common), problem)
    weights_diff = float(np.max(np.abs(fedavg.final_weights - degenerate.final_weights)))
    loss_diff = max(abs(a.train_loss - b.train_loss) for a, b in zip(fedavg.rows, degenerate.rows))
    same_sets = fedavg.participation_log == degenerate.participation_log
    lambda_hat = staleness_report(degenerate).lambda_hat
    passed = weights_diff <= tolerance and loss_diff <= tolerance and same_sets and lambda_hat == 0
    return CheckResult('synchronous_reduction', passed, {
        'max_abs_diff': weights_diff, 'max_loss_diff': loss_diff, 'same_participation': same_sets,
        'lambda_hat': lambda_hat,
    })


def asysg_reduction_check(N: int = 10, n: int = 3, T: int = 60, rate: float = 0.05, seed: int = 5,
                          tolerance: float = 1e-12) -> CheckResult:
    """DeFedAvg-IID with K=1, eta=1 against the plain asynchronous SGD recursion."""
    problem = make_quadratic(N, 8, 0.0, 1.0, seed)
    local = run(_quadratic_config(T, N, n, 1, 1.0, 0.0, 8, seed, AlgorithmKind.DEFEDAVG_IID,
                                  eta=1.0, eta_bar=rate), problem)
    asysg = run(_quadratic_config(T, N, n, 1, 1.0, 0.0, 8, seed, AlgorithmKind.ASYSG, eta=rate), problem)

    trajectory = [problem.initial_weights()]
    server = ServerState(round=0, weights=trajectory[0], eta=1.0)
    for records in local.participation_log:
        gradient = np.zeros(problem.dim)
        for record in records:
            rng = derive_stream(seed, record.rng_label)
            gradient += problem.stochastic_gradient(record.client_id, trajectory[record.base_round], 1, rng)
        server = asysg_step(server, gradient / n, rate)
        trajectory.append(server.weights)

    replay_diff = float(np.max(np.abs(trajectory[-1] - local.final_weights)))
    kind_diff = float(np.max(np.abs(asysg.final_weights - local.final_weights)))
    passed = replay_diff <= tolerance and kind_diff == 0.0
    return CheckResult('asysg_reduction', passed, {'max_abs_diff': replay_diff, 'asysg_vs_local_k1': kind_diff})


def _biased_sampler(num_clients: int, n: int, trials: int, rng: RngStream) -> np.ndarray:
    weights = np.arange(1, num_clients + 1, dtype=np.float64)
    cumulative = np.cumsum(weights / weights.sum())
    draws = np.searchsorted(cumulative, rng.uniform(size=(trials, n)), side='right')
    return np.minimum(draws, num_clients - 1)


def unbiasedness_check(N: int = 20, n: int = 5, dim: int = 6, trials: int = 100000, seed: int = 3) -> CheckResult:
    rng = derive_stream(seed, 'verify/unbiased')
    deltas = rng.normal(size=(N, dim))
    uniform = mc_unbiasedness_check(deltas, n, trials, rng.child('uniform'))
    biased = mc_unbiasedness_check(deltas, n, trials, rng.child('biased'), sampler=_biased_sampler)
    return CheckResult('unbiasedness', uniform.passed and not biased.passed, {
        'max_z': uniform.max_z, 'negative_control_max_z': biased.max_z,
    })


def variance_check(cases=((5, 4, 1.0), (1, 1, 2.0), (10, 8, 0.5)), trials: int = 100000,
                   dim: int = 10, seed: int = 4) -> CheckResult:
    details = {}
    passed = True
    for n, K, sigma in cases:
        problem = make_quadratic(4, dim, 0.0, sigma, seed)
        report = mc_variance_check(problem, n, K, trials, derive_stream(seed, f'verify/variance/{n}/{K}/{sigma}'))
        details[f'n{n}_K{K}_sigma{sigma:g}'] = {'empirical': report.empirical, 'reference': report.reference,
                                                'se': report.standard_error}
        passed = passed and report.passed
    return CheckResult('variance_bound', passed, details)


def rate_calculator_check(tolerance: float = 1e-9) -> CheckResult:
    constants = ProblemConstants(L=1.0, sigma=1.0, G=1.0, nu=0.0, gap=2.0)
    niid = niid_rates(10, 50, constants, 10000, 1)
    iid = iid_rates(10, 50, constants, 10000, 1)
    expected = {
        'niid_eta': (niid.eta, np.sqrt(4000.0)),
        'niid_eta_bar': (niid.eta_bar, 1.0 / (np.sqrt(104.0 * 1e4) * 50)),
        'iid_eta': (iid.eta, np.sqrt(500.0)),
        'iid_eta_bar': (iid.eta_bar, 2e-4),
        'lambda_bound': (float(lambda_bound(100, 10, 1000, 0.01)), 180.0),
    }
    errors = {name: float(abs(got - want) / abs(want)) for name, (got, want) in expected.items()}
    return CheckResult('rate_calculators', bool(max(errors.values()) <= tolerance), errors)


def gradient_check(problem: Problem, probes: int, rng: RngStream, batch: int = 5, h: float = 1e-6,
                   scale: float = 0.5) -> float:
    """Largest relative L2 error between analytic and central-difference gradients."""
    worst = 0.0
    for _ in range(probes):
        client = int(rng.integers(problem.num_clients))
        w = problem.initial_weights() + scale * rng.normal(size=problem.dim)
        if isinstance(problem, ClassificationProblem):
            x, y = problem.shards[client]
            idx = rng.integers(y.size, size=batch)
            analytic = problem.loss_and_gradient(w, x[idx], y[idx])[1]
            numeric = finite_difference_gradient(lambda v: problem.batch_loss(v, x[idx], y[idx]), w, h)
        else:
            analytic = problem.client_gradient(client, w)
            numeric = finite_difference_gradient(lambda v: problem.client_loss(client, v), w, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def gradient_correctness_check(probes: int = 20, seed: int = 9, tolerance: float = 1e-5) -> CheckResult:
    train, _ = DatasetRepository.synthetic_classification(60, 4, 3, seed)
    shards = partition(train, PartitionScheme.IID, 4, seed)
    rng = derive_stream(seed, 'verify/gradcheck')
    logreg = gradient_check(make_logreg(train, shards, l2=0.01), probes, rng.child('logreg'))
    mlp = gradient_check(make_mlp(train, shards, 5, seed, l2=0.01), probes, rng.child('mlp'))
    return CheckResult('gradient_correctness', max(logreg, mlp) <= tolerance,
                       {'logreg_rel_error': logreg, 'mlp_rel_error': mlp})


def staleness_audit(runs: int = 20, N: int = 50, n: int = 10, T: int = 200, delta: float = 0.01,
                    required_fraction: float = 0.95, flops_per_iter: float = 16000.0) -> CheckResult:
    bound = lambda_bound(N, n, T, delta)
    within = 0
    causal = True
    worst = 0
    system = SystemSpec(flops_per_iter=flops_per_iter)
    # delays depend on K * flops_per_iter only, so a single local step carries the whole job
    for seed in range(runs):
        config = _quadratic_config(T, N, n, 1, 1.0, 0.5, 10, seed, AlgorithmKind.DEFEDAVG_NIID,
                                   eta=1.0, eta_bar=0.01, system=system, eval_every=T)
        report = staleness_report(run(config))
        causal = causal and report.causal and all(0 <= s <= report.lambda_hat for s in report.histogram)
        within += report.lambda_hat <= bound
        worst = max(worst, report.lambda_hat)
    passed = causal and within >= required_fraction * runs
    return CheckResult('staleness_audit', passed, {
        'lambda_bound': bound, 'runs_within': within, 'runs': runs, 'max_lambda_hat': worst,
    })


def lazy_realization_check(seed: int = 2) -> CheckResult:
    """A job realized later gives the same delta as training right away."""
    problem = make_quadratic(3, 5, 0.3, 1.0, seed)
    base = StampedModel(0, problem.initial_weights())
    job = TrainingJob(1, base, 'train/1/base/0/rep/0')
    first = realize(job, 4, 0.1, problem, 1, seed)
    second = realize(job, 4, 0.1, problem, 1, seed)
    return CheckResult('lazy_realization', bool(np.array_equal(first.delta, second.delta)))


SUITE: Dict[str, Callable[[], CheckResult]] = {
    'rate_calculators': rate_calculator_check,
    'compact_oracle': compact_oracle_check,
    'synchronous_reduction': synchronous_reduction_check,
    'asysg_reduction': asysg_reduction_check,
    'unbiasedness': unbiasedness_check,
    'variance_bound': variance_check,
    'gradient_correctness': gradient_correctness_check,
    'staleness_audit': staleness_audit,
    'lazy_realization': lazy_realization_check,
}


def run_suite(only: Optional[List[str]] = None) -> VerificationReport:
    names = only or list(SUITE)
    unknown = [name for name in names if name not in SUITE]
    if unknown:
        raise KeyError(f'unknown checks {unknown}; available: {", ".join(SUITE)}')
    checks = []
    for name in names:
        started = time.perf_counter()
        try:
            result = SUITE[name]()
        except DeFedAvgError as e:
            logger.error(f'Check {name} raised: {e}')
            result = CheckResult(name, False, {'error': str(e)})
        result.seconds = time.perf_counter() - started
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f'{name}: {"PASS" if result.passed else "FAIL"} ({result.seconds:.2f}s)')
        checks.append(result)
    return VerificationReport(checks)
