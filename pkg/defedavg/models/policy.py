from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

from defedavg.models.state import SendPolicy


class AlgorithmKind(Enum):
    FEDAVG = 'fedavg'
    DEFEDAVG_NIID = 'defedavg_niid'
    DEFEDAVG_IID = 'defedavg_iid'
    FEDBUFF = 'fedbuff'
    ASYSG = 'asysg'

    @property
    def samples_participants(self) -> bool:
        return self in (AlgorithmKind.FEDAVG, AlgorithmKind.DEFEDAVG_NIID)

    @property
    def arrival_order(self) -> bool:
        return not self.samples_participants


@dataclass(frozen=True)
class Policy:
    kind: AlgorithmKind
    num_clients: int
    n: int
    K: int
    eta: float
    eta_bar: float
    send_policy: SendPolicy = SendPolicy.ALWAYS_OVERWRITE
    synchronous: bool = False

    def __post_init__(self):
        if not 1 <= self.n <= self.num_clients:
            raise ValueError(f'participants per round must satisfy 1 <= n <= N, got n={self.n}, N={self.num_clients}')
        if self.K < 1:
            raise ValueError(f'local steps must be at least 1, got K={self.K}')
        if self.eta < 0 or self.eta_bar < 0:
            raise ValueError('learning rates must be nonnegative')
        if self.synchronous and self.kind is not AlgorithmKind.DEFEDAVG_NIID:
            raise ValueError('synchronous mode only applies to defedavg_niid')

    def effective(self) -> 'Policy':
        """AsySG runs as DeFedAvg-IID with K=1, the single rate as eta_bar and eta=1."""
        if self.kind is AlgorithmKind.ASYSG:
            return replace(self, K=1, eta=1.0, eta_bar=self.eta)
        return self


@dataclass(frozen=True)
class ParticipantSpec:
    count: int
    multiset: Optional[Tuple[int, ...]] = None

    @property
    def sampled(self) -> bool:
        return self.multiset is not None

    def distinct(self) -> Tuple[int, ...]:
        return tuple(sorted(set(self.multiset))) if self.multiset is not None else ()
