"""End-to-end checks at the sizes the verify suite and the sweeps are meant to run at."""
import json

import numpy as np

from defedavg.middleware.error_handlers import EXIT_OK
from defedavg.models.policy import AlgorithmKind
from defedavg.models.run_config import ProblemSpec, RateMode, RunConfig, SystemSpec, TargetMetric
from defedavg.services.simulator_service import run
from defedavg.services.sweep_service import sweep
from defedavg.services.target_service import first_hit, resolve_target
from defedavg.services.verification_service import (
    SUITE, compact_oracle_check, gradient_correctness_check, staleness_audit, synchronous_reduction_check,
    unbiasedness_check, variance_check,
)

EQUAL = dict(speed_min=1.0, speed_max=1.0)


def test_buffered_run_matches_the_compact_recursion():
    check = compact_oracle_check(N=20, n=5, K=5, T=50)
    assert check.passed, check.details
    assert check.details['max_abs_diff'] <= 1e-10


def test_degenerate_niid_is_fedavg_over_100_rounds():
    check = synchronous_reduction_check(N=10, n=4, K=3, T=100)
    assert check.passed, check.details


def test_sampled_aggregate_is_unbiased():
    check = unbiasedness_check(trials=100000)
    assert check.passed, check.details


def test_variance_of_summed_oracle_noise():
    check = variance_check(trials=100000)
    assert check.passed, check.details


def test_analytic_gradients():
    check = gradient_correctness_check(probes=20)
    assert check.passed, check.details


def test_more_participants_reach_the_target_in_fewer_rounds():
    # one local step of 61us against 160us links: every update is computed on the model from two rounds back
    base = RunConfig(
        T=2000,
        problem=ProblemSpec(kind='quadratic', N=64, dim=1000, nu=0.5, sigma=1.0, gap=0.013),
        algorithm=AlgorithmKind.DEFEDAVG_NIID, n=2, K=1, eta=1.0, eta_bar=0.055, batch=1,
        system=SystemSpec(flops_per_iter=6.1e5, **EQUAL),
        target_metric=TargetMetric.GRAD_NORM_SQ, target=0.02, stop_at_target=True,
    )
    assert base.eval_every == 1
    table = sweep(base, [2, 4, 8, 16, 32], [1, 2, 3, 4, 5], workers=1)
    means = [table.summary(n).mean_rounds for n in (2, 4, 8, 16, 32)]
    assert None not in means
    assert all(later <= earlier for earlier, later in zip(means, means[1:]))
    assert means[0] / means[-1] >= 3


def test_first_arrivals_beat_waiting_for_stragglers():
    problem = ProblemSpec(kind='logreg', N=50, dataset='synthetic', samples=1000, features=10, classes=2, l2=0.01)
    system = SystemSpec(profile='fashionmnist')
    times = {}
    for algorithm, T in ((AlgorithmKind.FEDAVG, 600), (AlgorithmKind.DEFEDAVG_IID, 3000)):
        config = RunConfig(T=T, problem=problem, algorithm=algorithm, n=10, K=50, eta=1.0, eta_bar=0.005,
                           system=system, target_metric=TargetMetric.GRAD_NORM_SQ, target=0.005,
                           stop_at_target=True)
        target = resolve_target(config)
        hits = []
        for seed in range(1, 6):
            result = run(config.with_overrides(seed=seed))
            hit = first_hit(result.rows, target)
            assert hit is not None, f'{algorithm.value} seed {seed} missed the target'
            hits.append(hit.wall_clock)
        times[algorithm] = float(np.mean(hits))
    assert times[AlgorithmKind.DEFEDAVG_IID] <= times[AlgorithmKind.FEDAVG] / 1.3


def test_observed_delay_stays_under_the_high_probability_bound():
    check = staleness_audit(runs=100, N=50, n=10, T=500)
    assert check.passed, check.details


def test_more_local_steps_need_fewer_rounds():
    rounds = []
    for K in (5, 20, 50):
        config = RunConfig(
            T=300,
            problem=ProblemSpec(kind='quadratic', N=10, dim=10, nu=0.0, sigma=1.0, gap=0.5),
            algorithm=AlgorithmKind.DEFEDAVG_IID, n=10, K=K, batch=1, rates=RateMode.THEOREM, horizon=6000,
            system=SystemSpec(flops_per_iter=1e6, **EQUAL), target_metric=TargetMetric.GRAD_NORM_SQ,
            target=0.01, seed=1,
        )
        hit = first_hit(run(config).rows, resolve_target(config))
        assert hit is not None, f'K={K} missed the target'
        rounds.append(hit.round)
    assert rounds == sorted(rounds, reverse=True)


def test_verify_command_passes_the_default_suite(app, capsys):
    assert app.run(['verify']) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload['passed'] is True
    assert len(payload['checks']) == len(SUITE)
