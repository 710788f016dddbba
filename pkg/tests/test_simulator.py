from collections import defaultdict

import numpy as np
import pytest

from defedavg.errors import CausalityError, DeadlockError, ProblemError
from defedavg.models.metrics import RunResult
from defedavg.models.policy import AlgorithmKind
from defedavg.models.run_config import ProblemSpec, RunConfig, SystemSpec, TargetMetric
from defedavg.services.problem_service import make_quadratic
from defedavg.services.simulator_service import (
    EventKind, EventQueue, FederatedSimulation, comm_time, compute_time, draw_speed_factors, prepare, resolve_system,
    run, staleness_report,
)
from defedavg.services.theory_service import participation_fairness_check, speed_bias_witness
from defedavg.services.verification_service import synchronous_reduction_check

EQUAL = SystemSpec(speed_min=1.0, speed_max=1.0)
# one second each way, training 2 ms per job at speed factor 1
SLOW_LINK = SystemSpec(speed_min=1.0, speed_max=1.0, flops_per_iter=1e6, c_mac=1e9,
                       model_bytes=1e6, bandwidth_down=8e6, bandwidth_up=8e6)


def _config(algorithm=AlgorithmKind.DEFEDAVG_NIID, T=30, N=10, n=3, K=2, **overrides):
    problem = overrides.pop('problem', ProblemSpec(kind='quadratic', N=N, dim=4, nu=0.5, sigma=1.0))
    base = dict(eta=1.0, eta_bar=0.05, batch=1, seed=3)
    base.update(overrides)
    return RunConfig(T=T, problem=problem, algorithm=algorithm, n=n, K=K, **base)


def test_time_model():
    assert compute_time(2.0, 50, 17e6, 10e9) == pytest.approx(0.17)
    assert comm_time(2.2e6, 400e6) == pytest.approx(0.044)


def test_profiles_and_overrides(quadratic):
    profiled = resolve_system(SystemSpec(profile='cifar10'), quadratic, 10)
    assert (profiled.flops_per_iter, profiled.model_bytes) == (31.4e6, 3.53e6)
    analytic = resolve_system(SystemSpec(flops_per_iter=5.0), quadratic, 10)
    assert analytic.flops_per_iter == 5.0
    assert analytic.model_bytes == 8 * quadratic.dim
    with pytest.raises(ValueError):
        resolve_system(SystemSpec(profile='imagenet'), quadratic, 10)


def test_speed_factors_are_seeded_and_bounded(quadratic):
    system = resolve_system(SystemSpec(), quadratic, 1)
    speeds = draw_speed_factors(200, system, 4)
    assert np.array_equal(speeds, draw_speed_factors(200, system, 4))
    assert speeds.min() >= 1.0 and speeds.max() <= 5.0
    assert np.all(draw_speed_factors(5, resolve_system(EQUAL, quadratic, 1), 4) == 1.0)


def test_event_queue_breaks_ties_by_kind_then_client():
    queue = EventQueue()
    queue.schedule(1.0, EventKind.BROADCAST_ARRIVE, 0)
    queue.schedule(1.0, EventKind.ROUND_TRIGGER)
    queue.schedule(1.0, EventKind.UPLOAD_ARRIVE, 5)
    queue.schedule(1.0, EventKind.UPLOAD_ARRIVE, 2)
    queue.schedule(1.0, EventKind.TRAINING_DONE, 9)
    queue.schedule(0.5, EventKind.BROADCAST_ARRIVE, 7)
    order = [(e.kind, e.client_id) for e in (queue.pop() for _ in range(6))]
    assert order == [
        (EventKind.BROADCAST_ARRIVE, 7),
        (EventKind.TRAINING_DONE, 9),
        (EventKind.UPLOAD_ARRIVE, 2),
        (EventKind.UPLOAD_ARRIVE, 5),
        (EventKind.ROUND_TRIGGER, -1),
        (EventKind.BROADCAST_ARRIVE, 0),
    ]
    assert queue.now == 1.0


def test_event_in_the_past_is_a_causality_error():
    queue = EventQueue()
    queue.schedule(-1.0, EventKind.TRAINING_DONE, 0)
    with pytest.raises(CausalityError):
        queue.pop()


@pytest.mark.parametrize('algorithm', list(AlgorithmKind))
def test_every_algorithm_runs_deterministically(algorithm):
    config = _config(algorithm, K=1 if algorithm is AlgorithmKind.ASYSG else 2)
    first, second = run(config), run(config)
    assert first.rounds_completed == 30
    assert np.array_equal(first.final_weights, second.final_weights)
    assert first.rows == second.rows
    clock = [row.wall_clock for row in first.rows]
    assert clock == sorted(clock)
    assert all(len(records) == 3 for records in first.participation_log)


def test_eval_rows_follow_eval_every():
    result = run(_config(T=10, eval_every=4))
    assert [row.round for row in result.rows] == [0, 4, 8, 10]
    assert result.rows[0].wall_clock == 0.0
    assert result.rows[0].mean_staleness == 0.0


def test_fedavg_rounds_last_one_round_trip_with_equal_speeds():
    result = run(_config(AlgorithmKind.FEDAVG, T=5, K=2, system=SLOW_LINK))
    assert result.round_durations == pytest.approx([2.002] * 5)
    assert staleness_report(result).lambda_hat == 0


def test_fedavg_broadcasts_only_to_sampled_clients():
    result = run(_config(AlgorithmKind.FEDAVG, T=8, N=20, n=4, trace=True))
    per_round = defaultdict(set)
    for event in result.trace:
        if event.kind == 'broadcast':
            per_round[event.round].add(event.client_id)
    for t, records in enumerate(result.participation_log):
        assert per_round[t] == {r.client_id for r in records}


def test_niid_keeps_sampling_multiplicity():
    result = run(_config(T=200, N=4, n=4))
    sizes = [len(records) for records in result.participation_log]
    assert set(sizes) == {4}
    assert any(len({r.client_id for r in records}) < 4 for records in result.participation_log)


def test_niid_clients_only_upload_finished_training():
    result = run(_config(T=20, trace=True))
    finished = defaultdict(int)
    for event in result.trace:
        if event.kind == 'train_done':
            finished[event.client_id] += 1
        elif event.kind == 'upload':
            assert finished[event.client_id] > 0


def test_iid_aggregates_uploads_in_arrival_order():
    result = run(_config(AlgorithmKind.DEFEDAVG_IID, T=15, N=8, n=3, trace=True))
    arrivals = [e.client_id for e in result.trace if e.kind == 'upload_arrive']
    used = [r.client_id for records in result.participation_log for r in records]
    assert used == arrivals[:len(used)]


def test_staleness_is_causal_and_reported():
    result = run(_config(T=60, N=12, n=3, system=SystemSpec(flops_per_iter=2e6)))
    report = staleness_report(result)
    assert report.causal
    assert all(0 <= s <= report.lambda_hat for s in report.histogram)
    assert sum(report.histogram.values()) == 60 * 3
    assert report.histogram == result.staleness_histogram


def test_staleness_report_needs_rounds():
    empty = RunResult(rows=[], participation_log=(), staleness_histogram={}, final_weights=np.zeros(1))
    with pytest.raises(ValueError):
        staleness_report(empty)


def test_stop_at_target_ends_the_run_early():
    problem = ProblemSpec(kind='quadratic', N=10, dim=4, nu=0.5, sigma=0.0)
    config = _config(T=1000, problem=problem, target_metric=TargetMetric.GRAD_NORM_SQ, target=0.5,
                     stop_at_target=True)
    result = run(config)
    assert result.rounds_completed < 1000
    assert result.rows[-1].grad_norm_sq <= 0.5
    assert all(row.grad_norm_sq > 0.5 for row in result.rows[:-1])


def test_simulation_rejects_mismatched_problem():
    with pytest.raises(ProblemError):
        FederatedSimulation(_config(N=10), make_quadratic(5, 4, 0.5, 1.0, seed=0))


def test_exhausted_queue_is_reported_as_deadlock(monkeypatch):
    config = _config()
    simulation = FederatedSimulation(config, make_quadratic(10, 4, 0.5, 1.0, seed=3))
    monkeypatch.setattr(simulation, '_bootstrap', lambda: None)
    with pytest.raises(DeadlockError, match='round 0/30'):
        simulation.run()


def test_synchronous_mode_reproduces_fedavg():
    check = synchronous_reduction_check()
    assert check.passed, check.details


def test_sampled_participation_is_uniform():
    result = run(_config(T=300, N=20, n=5, system=SystemSpec(flops_per_iter=1e5)))
    assert participation_fairness_check(result, 20).passed


def test_arrival_order_favours_fast_clients_while_sampling_does_not():
    problem = ProblemSpec(kind='quadratic', N=1000, dim=5, nu=0.0, sigma=1.0)
    system = SystemSpec(flops_per_iter=1e6)
    fedbuff = run(_config(AlgorithmKind.FEDBUFF, T=200, n=10, K=1, problem=problem, system=system, eval_every=200))
    niid = run(_config(T=200, n=10, K=1, problem=problem, system=system, eval_every=200))
    assert speed_bias_witness(fedbuff).correlation < -0.3
    assert abs(speed_bias_witness(niid).correlation) < 0.1


def _client_timelines(trace):
    timelines = defaultdict(list)
    for event in trace:
        timelines[event.client_id].append((event.time, event.kind))
    return timelines


def test_fedavg_clients_stay_idle_between_upload_and_next_broadcast():
    result = run(_config(AlgorithmKind.FEDAVG, T=25, N=6, n=3, trace=True, system=SystemSpec(flops_per_iter=1e5)))
    for client, timeline in _client_timelines(result.trace).items():
        uploaded = False
        for _, kind in timeline:
            if kind == 'upload':
                uploaded = True
            elif kind == 'broadcast_arrive':
                uploaded = False
            elif kind == 'train_start':
                assert not uploaded, f'client {client} trained without a fresh broadcast'


@pytest.mark.parametrize('algorithm', [AlgorithmKind.DEFEDAVG_NIID, AlgorithmKind.DEFEDAVG_IID])
def test_asynchronous_clients_never_idle_once_they_hold_a_model(algorithm):
    result = run(_config(algorithm, T=40, N=8, n=3, trace=True, system=SystemSpec(flops_per_iter=1e5)))
    for client, timeline in _client_timelines(result.trace).items():
        arrivals = [t for t, kind in timeline if kind == 'broadcast_arrive']
        starts = [t for t, kind in timeline if kind == 'train_start']
        finishes = [t for t, kind in timeline if kind == 'train_done']
        assert starts[0] == arrivals[0]
        assert finishes, f'client {client} never finished training'
        assert starts[1:len(finishes) + 1] == finishes


def test_fedavg_round_waits_for_the_slowest_sampled_client():
    system = SystemSpec(speed_min=1.0, speed_max=5.0, flops_per_iter=1e8, c_mac=1e9,
                        model_bytes=1e6, bandwidth_down=8e6, bandwidth_up=8e6)
    config, problem = prepare(_config(AlgorithmKind.FEDAVG, T=10, N=8, n=3, system=system))
    simulation = FederatedSimulation(config, problem)
    result = simulation.run()
    assert len(set(simulation.job_times)) > 1
    for t, records in enumerate(result.participation_log):
        slowest = max(simulation.job_times[r.client_id] for r in records)
        expected = simulation.downlink + slowest + simulation.uplink
        assert result.round_durations[t] == pytest.approx(expected)
