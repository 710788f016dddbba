import numpy as np
import pytest
from scipy import stats

from defedavg.errors import CausalityError, ReplayDivergenceError
from defedavg.models.policy import AlgorithmKind, Policy
from defedavg.models.state import LocalUpdate, ParticipationRecord, ServerState, StampedModel
from defedavg.services.algorithm_service import (
    asysg_step, compact_oracle, sample_with_replacement, sampling_stream, select_participants, server_round,
)
from defedavg.services.numerics_service import derive_stream
from defedavg.services.problem_service import make_quadratic
from defedavg.services.training_service import local_train, training_label


def _policy(kind=AlgorithmKind.DEFEDAVG_NIID, N=6, n=3, K=2, eta=1.0, eta_bar=0.1, **kwargs):
    return Policy(kind=kind, num_clients=N, n=n, K=K, eta=eta, eta_bar=eta_bar, **kwargs)


def test_sampling_is_with_replacement_and_reproducible():
    draws = sample_with_replacement(3, 500, derive_stream(1, 'sample/round/0'))
    again = sample_with_replacement(3, 500, derive_stream(1, 'sample/round/0'))
    assert np.array_equal(draws, again)
    assert set(draws.tolist()) == {0, 1, 2}
    with pytest.raises(ValueError):
        sample_with_replacement(0, 1, derive_stream(1, 'x'))


def test_selection_depends_on_round_label_only():
    policy = _policy()
    rng = sampling_stream(5)
    spec = select_participants(policy, 7, rng)
    assert spec.sampled and spec.count == 3
    assert spec.multiset == select_participants(policy, 7, sampling_stream(5)).multiset
    assert set(spec.distinct()) <= set(range(6))


def test_arrival_order_algorithms_do_not_sample():
    for kind in (AlgorithmKind.DEFEDAVG_IID, AlgorithmKind.FEDBUFF, AlgorithmKind.ASYSG):
        spec = select_participants(_policy(kind=kind), 0, sampling_stream(0))
        assert not spec.sampled
        assert spec.distinct() == ()


def test_policy_validation_and_asysg_reduction():
    with pytest.raises(ValueError):
        _policy(n=7)
    with pytest.raises(ValueError):
        _policy(K=0)
    with pytest.raises(ValueError):
        _policy(kind=AlgorithmKind.FEDAVG, synchronous=True)
    effective = _policy(kind=AlgorithmKind.ASYSG, K=5, eta=0.03, eta_bar=0.9).effective()
    assert (effective.K, effective.eta, effective.eta_bar) == (1, 1.0, 0.03)


def test_server_round_logs_participation_and_rejects_future_bases():
    policy = _policy(n=2)
    server = ServerState(round=2, weights=np.zeros(2), eta=1.0)
    updates = [
        LocalUpdate(0, 1, np.array([1.0, 0.0]), 2, training_label(0, 1, 0)),
        LocalUpdate(4, 2, np.array([0.0, 1.0]), 2, training_label(4, 2, 0)),
    ]
    stepped = server_round(policy, server, updates)
    assert stepped.round == 3
    assert np.allclose(stepped.weights, [-0.5, -0.5])
    assert stepped.history() == [[(0, 1), (4, 2)]]
    assert [r.staleness for r in stepped.participation_log[0]] == [1, 0]

    future = [LocalUpdate(0, 3, np.zeros(2), 2), updates[0]]
    with pytest.raises(CausalityError):
        server_round(policy, server, future)


def test_asysg_step_uses_its_own_rate():
    server = ServerState(round=0, weights=np.array([1.0]), eta=0.7)
    stepped = asysg_step(server, np.array([2.0]), 0.25)
    assert np.allclose(stepped.weights, [0.5])
    assert stepped.eta == 0.7


def test_compact_oracle_matches_buffered_execution(quadratic):
    policy = _policy(n=2, K=3, eta=0.8, eta_bar=0.05)
    seed = 13
    server = ServerState(round=0, weights=quadratic.initial_weights(), eta=policy.eta)
    models = [StampedModel(0, server.weights)]
    bases = [[(0, 0), (3, 0)], [(1, 0), (3, 1)], [(2, 2), (2, 1)]]
    for t, pairs in enumerate(bases):
        updates = []
        for client, base_round in pairs:
            label = training_label(client, base_round, 0)
            updates.append(local_train(models[base_round], policy.K, policy.eta_bar, quadratic, client, 1,
                                       derive_stream(seed, label)))
        server = server_round(policy, server, updates)
        models.append(StampedModel(server.round, server.weights))
    replay = compact_oracle(server.participation_log, quadratic, quadratic.initial_weights(),
                            policy.eta, policy.eta_bar, policy.n, policy.K, 3, 1, seed)
    assert np.allclose(replay, server.weights, rtol=0, atol=1e-12)


def test_compact_oracle_detects_inconsistent_history(quadratic):
    w0 = quadratic.initial_weights()
    wrong_label = [(ParticipationRecord(0, 1, 0, training_label(2, 0, 0)),)]
    with pytest.raises(ReplayDivergenceError):
        compact_oracle(wrong_label, quadratic, w0, 1.0, 0.1, 1, 1, 1, 1, 0)
    with pytest.raises(ReplayDivergenceError):
        compact_oracle([], quadratic, w0, 1.0, 0.1, 1, 1, 1, 1, 0)
    future = [(ParticipationRecord(0, 1, 1, training_label(1, 1, 0)),)]
    with pytest.raises(ReplayDivergenceError):
        compact_oracle(future, quadratic, w0, 1.0, 0.1, 1, 1, 1, 1, 0)


def test_inclusion_frequency_matches_sampling_with_replacement():
    rng = derive_stream(2, 'sample')
    trials = 20000
    included = np.zeros(100)
    for _ in range(trials):
        included[np.unique(sample_with_replacement(100, 10, rng))] += 1
    expected = 1.0 - 0.99 ** 10
    assert expected == pytest.approx(0.09562, abs=1e-5)
    assert included.mean() / trials == pytest.approx(expected, abs=1e-3)
    assert included[0] / trials == pytest.approx(expected, abs=0.01)


def test_two_draws_from_two_clients_give_four_equally_likely_outcomes():
    rng = derive_stream(3, 'sample')
    counts = np.zeros(4, dtype=np.int64)
    for _ in range(40000):
        first, second = sample_with_replacement(2, 2, rng)
        counts[2 * first + second] += 1
    assert stats.chisquare(counts).pvalue > 1e-3


def test_noiseless_full_participation_round_descends():
    problem = make_quadratic(5, 4, 0.5, 0.0, seed=3)
    policy = _policy(N=5, n=5, K=2, eta=1.0, eta_bar=0.1)
    server = ServerState(round=0, weights=np.full(4, 3.0), eta=policy.eta)
    for _ in range(5):
        base = StampedModel(server.round, server.weights)
        updates = [
            local_train(base, policy.K, policy.eta_bar, problem, c, 1,
                        derive_stream(0, training_label(c, base.round, 0)))
            for c in range(5)
        ]
        stepped = server_round(policy, server, updates)
        assert problem.loss(stepped.weights) < problem.loss(server.weights)
        assert np.allclose(stepped.weights, server.weights - 0.19 * problem.gradient(server.weights))
        server = stepped
