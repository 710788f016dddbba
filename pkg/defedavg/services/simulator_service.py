import heapq
import logging
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from defedavg.errors import CausalityError, DeadlockError, ProblemError
from defedavg.models.metrics import MetricsRow, RunResult, StalenessReport, TraceEvent
from defedavg.models.policy import AlgorithmKind
from defedavg.models.run_config import RateMode, RunConfig, SystemSpec
from defedavg.models.state import (
    ClientState, LocalUpdate, ServerState, StampedModel, TrainingJob,
)
from defedavg.services.algorithm_service import sampling_stream, select_participants, server_round
from defedavg.services.numerics_service import derive_stream
from defedavg.services.problem_service import Problem, build_problem
from defedavg.services.target_service import TargetTracker, resolve_target
from defedavg.services.theory_service import resolve_rates
from defedavg.services.training_service import (
    deposit_receive, deposit_send, realize, take_send, training_label,
)

logger = logging.getLogger(__name__)

# (flops per local iteration, model bytes) measured for the CNN workloads
PROFILES: Dict[str, Tuple[float, float]] = {
    'fashionmnist': (17.0e6, 2.2e6),
    'cifar10': (31.4e6, 3.53e6),
}


def compute_time(speed_factor: float, K: int, flops_per_iter: float, c_mac: float) -> float:
    return K * flops_per_iter * speed_factor / c_mac


def comm_time(model_bytes: float, bandwidth_bits_per_s: float) -> float:
    return 8.0 * model_bytes / bandwidth_bits_per_s


@dataclass(frozen=True)
class SystemModel:
    c_mac: float
    flops_per_iter: float
    bandwidth_down: float
    bandwidth_up: float
    model_bytes: float
    speed_min: float
    speed_max: float

    def __post_init__(self):
        for name in ('c_mac', 'flops_per_iter', 'bandwidth_down', 'bandwidth_up', 'speed_min'):
            if getattr(self, name) <= 0:
                raise ValueError(f'system.{name} must be positive, got {getattr(self, name)}')
        if self.model_bytes < 0:
            raise ValueError(f'system.model_bytes must be nonnegative, got {self.model_bytes}')
        if self.speed_max < self.speed_min:
            raise ValueError(f'speed interval [{self.speed_min}, {self.speed_max}] is empty')


def resolve_system(spec: SystemSpec, problem: Problem, batch: int) -> SystemModel:
    if spec.profile == 'analytic':
        flops, size = problem.flops_per_iter(batch), problem.model_bytes()
    elif spec.profile in PROFILES:
        flops, size = PROFILES[spec.profile]
    else:
        raise ValueError(f'unknown system profile {spec.profile!r}')
    return SystemModel(
        c_mac=spec.c_mac,
        flops_per_iter=spec.flops_per_iter if spec.flops_per_iter is not None else flops,
        bandwidth_down=spec.bandwidth_down,
        bandwidth_up=spec.bandwidth_up,
        model_bytes=spec.model_bytes if spec.model_bytes is not None else size,
        speed_min=spec.speed_min,
        speed_max=spec.speed_max,
    )


def draw_speed_factors(num_clients: int, system: SystemModel, root_seed: int) -> np.ndarray:
    if system.speed_min == system.speed_max:
        return np.full(num_clients, system.speed_min)
    rng = derive_stream(root_seed, 'system/speeds')
    return rng.uniform(system.speed_min, system.speed_max, num_clients)


class EventKind(IntEnum):
    # value doubles as the tie-break priority at equal times
    TRAINING_DONE = 0
    UPLOAD_ARRIVE = 1
    ROUND_TRIGGER = 2
    BROADCAST_ARRIVE = 3


class Event(NamedTuple):
    time: float
    kind: EventKind
    client_id: int = -1
    payload: Any = None


class EventQueue:
    def __init__(self):
        self._heap: List[Tuple[float, int, int, int, Event]] = []
        self._seq = 0
        self.now = 0.0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, delay: float, kind: EventKind, client_id: int = -1, payload: Any = None) -> None:
        event = Event(self.now + delay, kind, client_id, payload)
        heapq.heappush(self._heap, (event.time, kind, client_id, self._seq, event))
        self._seq += 1

    def pop(self) -> Event:
        event = heapq.heappop(self._heap)[-1]
        if event.time < self.now:
            raise CausalityError(f'event at {event.time} popped after clock reached {self.now}')
        self.now = event.time
        return event


class FederatedSimulation:
    """Discrete-event run of one algorithm over simulated wall-clock time."""

    def __init__(self, config: RunConfig, problem: Problem):
        if problem.num_clients != config.N:
            raise ProblemError(f'problem has {problem.num_clients} clients, config says N={config.N}')
        self.config = config
        self.problem = problem
        self.policy = config.policy().effective()
        self.kind = config.algorithm
        self.system = resolve_system(config.system, problem, config.batch)
        self.speeds = draw_speed_factors(config.N, self.system, config.seed)
        self.downlink = comm_time(self.system.model_bytes, self.system.bandwidth_down)
        self.uplink = comm_time(self.system.model_bytes, self.system.bandwidth_up)
        self.job_times = [
            compute_time(s, self.policy.K, self.system.flops_per_iter, self.system.c_mac) for s in self.speeds
        ]
        self.server = ServerState(round=0, weights=problem.initial_weights(), eta=self.policy.eta)
        self.clients = [ClientState(id=i, speed_factor=float(s)) for i, s in enumerate(self.speeds)]
        self.queue = EventQueue()
        self.sampler = sampling_stream(config.seed)

        self._jobs: Dict[int, TrainingJob] = {}
        self._repeat: Dict[int, Tuple[int, int]] = {}
        self._multiset: Tuple[int, ...] = ()
        self._expected: int = 0
        self._awaiting: set = set()
        self._collected: Dict[int, LocalUpdate] = {}
        self._pool: List[LocalUpdate] = []
        self._trigger_pending = False
        self._round_start = 0.0
        self._stopped = False

        self.rows: List[MetricsRow] = []
        self.histogram: Counter = Counter()
        self.round_durations: List[float] = []
        self.trace: List[TraceEvent] = []
        self._window: List[int] = []
        f_star = problem.known_optimum.f_star if problem.known_optimum else None
        self.tracker = TargetTracker(resolve_target(config), f_star) if config.stop_at_target else None

    @property
    def sync_clients(self) -> bool:
        return self.kind is AlgorithmKind.FEDAVG or self.policy.synchronous

    def run(self) -> RunResult:
        T = self.config.T
        logger.info(f'Starting {self.kind.value}: N={self.config.N} n={self.policy.n} K={self.policy.K} T={T} seed={self.config.seed}')
        self._record()
        self._bootstrap()
        handlers = {
            EventKind.TRAINING_DONE: self._on_training_done,
            EventKind.UPLOAD_ARRIVE: self._on_upload,
            EventKind.ROUND_TRIGGER: self._on_round_trigger,
            EventKind.BROADCAST_ARRIVE: self._on_broadcast,
        }
        while self.server.round < T and not self._stopped:
            if not self.queue:
                raise DeadlockError(self._describe_stuck())
            event = self.queue.pop()
            handlers[event.kind](event)

        logger.info(f'Finished {self.kind.value} after {self.server.round} rounds at {self.queue.now:.6g}s simulated')
        return RunResult(
            rows=self.rows,
            participation_log=self.server.participation_log,
            staleness_histogram=dict(sorted(self.histogram.items())),
            final_weights=self.server.weights,
            speed_factors=self.speeds,
            round_durations=self.round_durations,
            stale_broadcasts=sum(c.stale_broadcasts for c in self.clients),
            dropped_updates=sum(c.dropped_updates for c in self.clients),
            f_star=self.problem.known_optimum.f_star if self.problem.known_optimum else None,
            trace=self.trace,
        )

    def _bootstrap(self) -> None:
        if self.kind is not AlgorithmKind.FEDAVG:
            self._broadcast(range(self.config.N))
        if self.kind.samples_participants:
            self.queue.schedule(0.0, EventKind.ROUND_TRIGGER)

    def _note(self, kind: str, client: int) -> None:
        if self.config.trace:
            self.trace.append(TraceEvent(self.queue.now, kind, client, self.server.round))

    def _broadcast(self, clients) -> None:
        model = StampedModel(self.server.round, self.server.weights)
        for c in clients:
            self._note('broadcast', c)
            self.queue.schedule(self.downlink, EventKind.BROADCAST_ARRIVE, c, model)

    def _start_training(self, c: int) -> None:
        client = self.clients[c]
        if c in self._jobs or client.receive_buffer is None:
            return
        base = client.receive_buffer
        last_base, rep = self._repeat.get(c, (-1, -1))
        rep = rep + 1 if last_base == base.round else 0
        self._repeat[c] = (base.round, rep)
        job = TrainingJob(c, base, training_label(c, base.round, rep))
        self._jobs[c] = job
        if self.sync_clients:
            client.receive_buffer = None
        client.busy_until = self.queue.now + self.job_times[c]
        client.training_base = base
        self._note('train_start', c)
        self.queue.schedule(self.job_times[c], EventKind.TRAINING_DONE, c)

    def _upload(self, c: int, job: TrainingJob) -> None:
        update = realize(job, self.policy.K, self.policy.eta_bar, self.problem, self.config.batch, self.config.seed)
        self._note('upload', c)
        self.queue.schedule(self.uplink, EventKind.UPLOAD_ARRIVE, c, update)

    def _on_training_done(self, event: Event) -> None:
        c = event.client_id
        job = self._jobs.pop(c)
        client = self.clients[c]
        client.training_base = None
        self._note('train_done', c)
        if self.kind is AlgorithmKind.FEDAVG:
            self._upload(c, job)
        elif self.kind.arrival_order:
            self.clients[c] = take_send(deposit_send(client, job, self.policy.send_policy))
            self._upload(c, job)
        elif self.policy.synchronous and job.base_round < self.server.round:
            logger.debug(f'Client {c}: discarding update from superseded base {job.base_round}')
        else:
            before = client.dropped_updates
            client = deposit_send(client, job, self.policy.send_policy)
            if client.dropped_updates > before:
                logger.debug(f'Client {c}: send buffer full, dropped update from base {job.base_round}')
            self.clients[c] = client
            if c in self._awaiting:
                self._try_take(c)
        self._start_training(c)

    def _try_take(self, c: int) -> None:
        client = self.clients[c]
        job = client.send_buffer
        if job is None:
            return
        if self.policy.synchronous and job.base_round != self.server.round:
            return
        self.clients[c] = take_send(client)
        self._awaiting.discard(c)
        self._upload(c, job)

    def _on_upload(self, event: Event) -> None:
        c, update = event.client_id, event.payload
        self._note('upload_arrive', c)
        if self.kind.samples_participants:
            self._collected[c] = update
            if len(self._collected) == self._expected:
                self._complete_round([self._collected[i] for i in self._multiset])
                if self.server.round < self.config.T and not self._stopped:
                    self.queue.schedule(0.0, EventKind.ROUND_TRIGGER)
            return
        self._pool.append(update)
        if not self._trigger_pending:
            self._trigger_pending = True
            self.queue.schedule(0.0, EventKind.ROUND_TRIGGER)

    def _on_round_trigger(self, event: Event) -> None:
        if not self.kind.samples_participants:
            self._trigger_pending = False
            n = self.policy.n
            while len(self._pool) >= n and self.server.round < self.config.T and not self._stopped:
                updates, self._pool = self._pool[:n], self._pool[n:]
                self._complete_round(updates)
            return

        spec = select_participants(self.policy, self.server.round, self.sampler)
        self._multiset = spec.multiset
        distinct = spec.distinct()
        self._expected = len(distinct)
        self._collected = {}
        if self.kind is AlgorithmKind.FEDAVG:
            self._broadcast(distinct)
        else:
            self._awaiting = set(distinct)
            for c in distinct:
                self._try_take(c)

    def _on_broadcast(self, event: Event) -> None:
        c, model = event.client_id, event.payload
        before = self.clients[c].stale_broadcasts
        client = deposit_receive(self.clients[c], model)
        if client.stale_broadcasts > before:
            self.clients[c] = client
            return
        if self.policy.synchronous and client.send_buffer is not None and client.send_buffer.base_round < model.round:
            client = take_send(client)
        self.clients[c] = client
        self._note('broadcast_arrive', c)
        self._start_training(c)

    def _complete_round(self, updates: List[LocalUpdate]) -> None:
        self.server = server_round(self.policy, self.server, updates)
        for record in self.server.participation_log[-1]:
            self.histogram[record.staleness] += 1
            self._window.append(record.staleness)
        now = self.queue.now
        self.round_durations.append(now - self._round_start)
        self._round_start = now
        t = self.server.round
        if self.kind is not AlgorithmKind.FEDAVG:
            self._broadcast(range(self.config.N))
        if t % self.config.eval_every == 0 or t == self.config.T:
            self._record()

    def _record(self) -> None:
        w = self.server.weights
        gradient = self.problem.gradient(w)
        window, self._window = self._window, []
        row = MetricsRow(
            round=self.server.round,
            wall_clock=self.queue.now,
            train_loss=self.problem.loss(w),
            grad_norm_sq=float(gradient @ gradient),
            test_accuracy=self.problem.accuracy(w),
            mean_staleness=float(np.mean(window)) if window else 0.0,
            max_staleness=int(max(window)) if window else 0,
        )
        self.rows.append(row)
        logger.debug(f'Round {row.round} at {row.wall_clock:.6g}s: loss={row.train_loss:.6g} grad_norm_sq={row.grad_norm_sq:.6g}')
        if self.tracker is not None and self.tracker.observe(row):
            logger.info(f'Target {self.tracker.target.describe()} reached at round {row.round}, stopping')
            self._stopped = True

    def _describe_stuck(self) -> str:
        busy = sorted(self._jobs)
        waiting = sorted(self._awaiting)
        return (f'event queue exhausted at round {self.server.round}/{self.config.T} '
                f'(time {self.queue.now:.6g}s): training clients {busy}, awaited clients {waiting}, '
                f'pooled updates {len(self._pool)}, collected {len(self._collected)}/{self._expected}')


def prepare(config: RunConfig, problem: Optional[Problem] = None) -> Tuple[RunConfig, Problem]:
    """Build the problem if needed and resolve theorem rates against it."""
    if problem is None:
        problem = build_problem(config.problem, config.seed)
    if config.rates is RateMode.THEOREM:
        config = resolve_rates(config, problem)
    return config, problem


def run(config: RunConfig, problem: Optional[Problem] = None) -> RunResult:
    config, problem = prepare(config, problem)
    return FederatedSimulation(config, problem).run()


def staleness_report(result: RunResult) -> StalenessReport:
    if not result.participation_log:
        raise ValueError('staleness report needs at least one completed round')
    values: List[int] = []
    per_client: Dict[int, int] = {}
    for records in result.participation_log:
        for record in records:
            values.append(record.staleness)
            per_client[record.client_id] = max(per_client.get(record.client_id, 0), record.staleness)
    histogram = dict(sorted(Counter(values).items()))
    return StalenessReport(
        lambda_hat=max(values),
        mean=float(np.mean(values)),
        histogram=histogram,
        per_client_max=dict(sorted(per_client.items())),
        causal=min(values) >= 0,
    )

