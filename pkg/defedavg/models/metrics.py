from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from defedavg.models.state import ParticipationRecord


@dataclass(frozen=True)
class MetricsRow:
    round: int
    wall_clock: float
    train_loss: float
    grad_norm_sq: float
    test_accuracy: Optional[float]
    mean_staleness: float
    max_staleness: int


@dataclass(frozen=True)
class TraceEvent:
    time: float
    kind: str
    client_id: int
    round: int


@dataclass
class RunResult:
    rows: List[MetricsRow]
    participation_log: Tuple[Tuple[ParticipationRecord, ...], ...]
    staleness_histogram: Dict[int, int]
    final_weights: np.ndarray
    speed_factors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    round_durations: List[float] = field(default_factory=list)
    stale_broadcasts: int = 0
    dropped_updates: int = 0
    f_star: Optional[float] = None
    trace: List[TraceEvent] = field(default_factory=list)

    @property
    def rounds_completed(self) -> int:
        return len(self.participation_log)

    def selection_counts(self, num_clients: int) -> np.ndarray:
        counts = np.zeros(num_clients, dtype=np.int64)
        for records in self.participation_log:
            for record in records:
                counts[record.client_id] += 1
        return counts


@dataclass(frozen=True)
class StalenessReport:
    lambda_hat: int
    mean: float
    histogram: Dict[int, int]
    per_client_max: Dict[int, int]
    causal: bool

    def to_dict(self) -> dict:
        return {
            'lambda_hat': self.lambda_hat,
            'mean': self.mean,
            'histogram': dict(self.histogram),
            'per_client_max': dict(self.per_client_max),
            'causal': self.causal,
        }


@dataclass(frozen=True)
class SweepCell:
    n: int
    seed: int
    rounds_to_target: Optional[int]
    time_to_target: Optional[float]

    @property
    def reached(self) -> bool:
        return self.rounds_to_target is not None


@dataclass(frozen=True)
class SweepSummary:
    n: int
    seeds: int
    reached: int
    mean_rounds: Optional[float]
    mean_time: Optional[float]
