import logging
import re
from dataclasses import replace
from typing import List, Sequence

import numpy as np

from defedavg.errors import CausalityError, ReplayDivergenceError
from defedavg.models.policy import ParticipantSpec, Policy
from defedavg.models.state import LocalUpdate, ParticipationRecord, ServerState
from defedavg.services.numerics_service import RngStream, Weights, derive_stream
from defedavg.services.problem_service import Problem
from defedavg.services.training_service import aggregate, global_step

logger = logging.getLogger(__name__)

_TRAIN_LABEL = re.compile(r'^train/(\d+)/base/(\d+)/rep/(\d+)$')


def sample_with_replacement(num_clients: int, n: int, rng: RngStream) -> np.ndarray:
    if num_clients < 1 or n < 1:
        raise ValueError(f'sampling needs N >= 1 and n >= 1, got N={num_clients}, n={n}')
    return rng.integers(num_clients, size=n).astype(np.int64)


def sampling_stream(root_seed: int) -> RngStream:
    return derive_stream(root_seed, 'sample')


def select_participants(policy: Policy, t: int, rng: RngStream) -> ParticipantSpec:
    if policy.kind.samples_participants:
        draws = sample_with_replacement(policy.num_clients, policy.n, rng.child(f'round/{t}'))
        return ParticipantSpec(count=policy.n, multiset=tuple(int(c) for c in draws))
    return ParticipantSpec(count=policy.n)


def server_round(policy: Policy, server: ServerState, updates: Sequence[LocalUpdate]) -> ServerState:
    t = server.round
    for update in updates:
        if update.base_round > t:
            raise CausalityError(f'round {t}: update from client {update.client_id} claims base round {update.base_round}')
    delta_mean = aggregate(updates, policy.n)
    stepped = global_step(server, delta_mean)
    records = tuple(ParticipationRecord(t, u.client_id, u.base_round, u.rng_label) for u in updates)
    if logger.isEnabledFor(logging.DEBUG):
        staleness = [r.staleness for r in records]
        logger.debug(f'Round {t}: clients {[r.client_id for r in records]} staleness {staleness}')
    return replace(stepped, participation_log=server.participation_log + (records,))


def asysg_step(server: ServerState, gradient: Weights, rate: float) -> ServerState:
    stepped = global_step(replace(server, eta=rate), gradient)
    return replace(stepped, eta=server.eta)


def compact_oracle(history: Sequence[Sequence[ParticipationRecord]], problem: Problem, w0: Weights,
                   eta: float, eta_bar: float, n: int, K: int, T: int, batch: int, root_seed: int) -> Weights:
    """Replay w^{t+1} = w^t - (eta*eta_bar/n) sum_j sum_k grad f(w_j^{tau,k}) without any buffers."""
    if T > len(history):
        raise ReplayDivergenceError(f'history covers {len(history)} rounds, {T} requested')
    trajectory: List[Weights] = [np.asarray(w0, dtype=np.float64).copy()]
    for t in range(T):
        records = history[t]
        if len(records) != n:
            raise ReplayDivergenceError(f'round {t}: {len(records)} participants recorded, expected {n}')
        total = np.zeros_like(trajectory[0])
        for record in records:
            _check_label(t, record)
            total += _gradient_sum(problem, trajectory[record.base_round], record, eta_bar, K, batch, root_seed)
        trajectory.append(trajectory[t] - (eta * eta_bar / n) * total)
    return trajectory[T]


def _check_label(t: int, record: ParticipationRecord) -> None:
    if record.base_round > t:
        raise ReplayDivergenceError(f'round {t}: base round {record.base_round} lies in the future')
    match = _TRAIN_LABEL.match(record.rng_label)
    if match is None or int(match.group(1)) != record.client_id or int(match.group(2)) != record.base_round:
        raise ReplayDivergenceError(
            f'round {t}: stream label {record.rng_label!r} does not belong to client {record.client_id} at base {record.base_round}'
        )


def _gradient_sum(problem: Problem, start: Weights, record: ParticipationRecord, eta_bar: float,
                  K: int, batch: int, root_seed: int) -> Weights:
    rng = derive_stream(root_seed, record.rng_label)
    w = start.copy()
    total = np.zeros_like(w)
    for _ in range(K):
        g = problem.stochastic_gradient(record.client_id, w, batch, rng)
        total += g
        w = w - eta_bar * g
    return total
