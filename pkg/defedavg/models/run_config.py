from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from defedavg.models.policy import AlgorithmKind, Policy
from defedavg.models.state import SendPolicy


class RateMode(Enum):
    MANUAL = 'manual'
    PRESET = 'preset'
    THEOREM = 'theorem'


class TargetMetric(Enum):
    GRAD_NORM_SQ = 'grad_norm_sq'
    AVG_GRAD_NORM_SQ = 'avg_grad_norm_sq'
    LOSS_GAP = 'loss_gap'
    TRAIN_LOSS = 'train_loss'
    TEST_ACC = 'test_acc'

    @property
    def higher_is_better(self) -> bool:
        return self is TargetMetric.TEST_ACC


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = 'quadratic'
    N: int = 100
    dim: int = 10
    nu: float = 0.0
    sigma: float = 0.0
    gap: float = 1.0
    dataset: str = 'synthetic'
    samples: int = 1000
    features: int = 20
    classes: int = 2
    test_samples: int = 0
    partition: str = 'iid'
    l2: float = 0.0
    hidden: int = 16


@dataclass(frozen=True)
class SystemSpec:
    profile: str = 'analytic'
    c_mac: float = 10e9
    flops_per_iter: Optional[float] = None
    bandwidth_down: float = 400e6
    bandwidth_up: float = 400e6
    model_bytes: Optional[float] = None
    speed_min: float = 1.0
    speed_max: float = 5.0


@dataclass(frozen=True)
class RunConfig:
    T: int
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    algorithm: AlgorithmKind = AlgorithmKind.DEFEDAVG_NIID
    n: int = 10
    K: int = 50
    eta: float = 1.0
    eta_bar: float = 0.01
    batch: int = 10
    send_policy: SendPolicy = SendPolicy.ALWAYS_OVERWRITE
    synchronous: bool = False
    rates: RateMode = RateMode.MANUAL
    preset: str = ''
    lam: int = 1
    horizon: Optional[int] = None
    system: SystemSpec = field(default_factory=SystemSpec)
    seed: int = 0
    eval_every: int = 1
    trace: bool = False
    target_metric: Optional[TargetMetric] = None
    target: Optional[float] = None
    stop_at_target: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f'T must be at least 1, got {self.T}')
        if not 1 <= self.n <= self.problem.N:
            raise ValueError(f'n={self.n} must lie in [1, N={self.problem.N}]')
        if self.eval_every < 1:
            raise ValueError(f'eval_every must be at least 1, got {self.eval_every}')

    @property
    def N(self) -> int:
        return self.problem.N

    def policy(self) -> Policy:
        return Policy(
            kind=self.algorithm, num_clients=self.problem.N, n=self.n, K=self.K,
            eta=self.eta, eta_bar=self.eta_bar, send_policy=self.send_policy,
            synchronous=self.synchronous,
        )

    def with_overrides(self, **changes) -> 'RunConfig':
        return replace(self, **changes)
