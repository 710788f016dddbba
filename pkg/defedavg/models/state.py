from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np


class SendPolicy(Enum):
    ALWAYS_OVERWRITE = 'always_overwrite'
    OVERWRITE_ON_SELECT = 'overwrite_on_select'


@dataclass(frozen=True)
class StampedModel:
    round: int
    weights: np.ndarray


@dataclass(frozen=True)
class LocalUpdate:
    client_id: int
    base_round: int
    delta: np.ndarray
    steps: int
    rng_label: str = ''


@dataclass(frozen=True)
class TrainingJob:
    """A finished local training run whose delta has not been computed yet."""
    client_id: int
    base: StampedModel
    rng_label: str

    @property
    def base_round(self) -> int:
        return self.base.round


Deliverable = Union[LocalUpdate, TrainingJob]


@dataclass(frozen=True)
class ParticipationRecord:
    round: int
    client_id: int
    base_round: int
    rng_label: str = ''

    @property
    def staleness(self) -> int:
        return self.round - self.base_round


@dataclass
class ClientState:
    """Per-client buffers. The simulator updates timing fields in place; deposit helpers return copies."""
    id: int
    speed_factor: float = 1.0
    receive_buffer: Optional[StampedModel] = None
    send_buffer: Optional[Deliverable] = None
    busy_until: float = 0.0
    training_base: Optional[StampedModel] = None
    stale_broadcasts: int = 0
    dropped_updates: int = 0


@dataclass(frozen=True)
class ServerState:
    round: int
    weights: np.ndarray
    eta: float
    participation_log: Tuple[Tuple[ParticipationRecord, ...], ...] = field(default_factory=tuple)

    def history(self) -> List[List[Tuple[int, int]]]:
        return [[(r.client_id, r.base_round) for r in records] for records in self.participation_log]
