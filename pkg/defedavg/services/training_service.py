import logging
from dataclasses import replace
from typing import Sequence, Union

import numpy as np

from defedavg.errors import NumericalError
from defedavg.models.state import (
    ClientState, Deliverable, LocalUpdate, SendPolicy, ServerState, StampedModel, TrainingJob,
)
from defedavg.services.numerics_service import RngStream, Weights, derive_stream
from defedavg.services.problem_service import Problem

logger = logging.getLogger(__name__)


def local_train(base: StampedModel, steps: int, eta_bar: float, problem: Problem, client: int,
                batch: int, rng: RngStream) -> LocalUpdate:
    if steps < 1:
        raise ValueError(f'local training needs K >= 1, got {steps}')
    if eta_bar < 0:
        raise ValueError(f'local learning rate must be nonnegative, got {eta_bar}')
    w = base.weights.copy()
    for _ in range(steps):
        w -= eta_bar * problem.stochastic_gradient(client, w, batch, rng)
    # non-finite entries persist through later steps
    if not np.isfinite(w).all():
        raise NumericalError(f'client {client}: non-finite local iterate after {steps} steps (base round {base.round})')
    return LocalUpdate(client_id=client, base_round=base.round, delta=base.weights - w,
                       steps=steps, rng_label=rng.label)


def training_label(client: int, base_round: int, repeat: int) -> str:
    return f'train/{client}/base/{base_round}/rep/{repeat}'


def realize(job: Deliverable, steps: int, eta_bar: float, problem: Problem, batch: int,
            root_seed: int) -> LocalUpdate:
    if isinstance(job, LocalUpdate):
        return job
    rng = derive_stream(root_seed, job.rng_label)
    return local_train(job.base, steps, eta_bar, problem, job.client_id, batch, rng)


def aggregate(updates: Sequence[LocalUpdate], n: int) -> Weights:
    if not updates:
        raise ValueError('cannot aggregate an empty update list')
    if len(updates) != n:
        raise ValueError(f'expected {n} updates (multiset size), got {len(updates)}')
    dim = updates[0].delta.shape
    total = np.zeros(dim)
    for update in updates:
        if update.delta.shape != dim:
            raise ValueError(f'update from client {update.client_id} has shape {update.delta.shape}, expected {dim}')
        total += update.delta
    return total / n


def global_step(server: ServerState, delta_mean: Weights) -> ServerState:
    if delta_mean.shape != server.weights.shape:
        raise ValueError(f'delta shape {delta_mean.shape} does not match model shape {server.weights.shape}')
    weights = server.weights - server.eta * delta_mean
    if not np.all(np.isfinite(weights)):
        raise NumericalError(f'non-finite global model after round {server.round}')
    return replace(server, round=server.round + 1, weights=weights)


def deposit_receive(client: ClientState, model: StampedModel) -> ClientState:
    current = client.receive_buffer
    if current is not None and model.round < current.round:
        logger.warning(f'Client {client.id}: ignoring stale broadcast of round {model.round} (holding {current.round})')
        return replace(client, stale_broadcasts=client.stale_broadcasts + 1)
    return replace(client, receive_buffer=model)


def deposit_send(client: ClientState, update: Deliverable,
                 policy: Union[SendPolicy, str] = SendPolicy.ALWAYS_OVERWRITE) -> ClientState:
    policy = SendPolicy(policy)
    if client.send_buffer is not None and policy is SendPolicy.OVERWRITE_ON_SELECT:
        return replace(client, dropped_updates=client.dropped_updates + 1)
    return replace(client, send_buffer=update)


def take_send(client: ClientState) -> ClientState:
    return replace(client, send_buffer=None)
