import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from defedavg.errors import ConfigError
from defedavg.models.metrics import MetricsRow
from defedavg.models.run_config import RunConfig, TargetMetric

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.01

# accuracy targets for real datasets, keyed by (dataset, partition)
ACCURACY_TARGETS = {
    ('fashionmnist', 'iid'): 0.90,
    ('fashionmnist', 'two_class'): 0.80,
    ('cifar10', 'iid'): 0.70,
    ('cifar10', 'two_class'): 0.60,
}


@dataclass(frozen=True)
class Target:
    metric: TargetMetric
    threshold: float

    def describe(self) -> str:
        op = '>=' if self.metric.higher_is_better else '<='
        return f'{self.metric.value} {op} {self.threshold:g}'


def resolve_target(config: RunConfig) -> Target:
    spec = config.problem
    accuracy = ACCURACY_TARGETS.get((spec.dataset, spec.partition)) if spec.kind != 'quadratic' else None
    metric = config.target_metric
    if metric is None:
        metric = TargetMetric.TEST_ACC if accuracy is not None else TargetMetric.GRAD_NORM_SQ
    threshold = config.target
    if threshold is None:
        if metric is TargetMetric.TEST_ACC:
            if accuracy is None:
                raise ConfigError('target_metric test_acc needs an explicit run.target for this dataset')
            threshold = accuracy
        else:
            threshold = DEFAULT_EPSILON
    return Target(metric, float(threshold))


class TargetTracker:
    """Watches eval rows in order and remembers the first one meeting the target."""

    def __init__(self, target: Target, f_star: Optional[float] = None):
        if target.metric is TargetMetric.LOSS_GAP and f_star is None:
            raise ConfigError('target_metric loss_gap needs a problem with a known optimum')
        self.target = target
        self.f_star = f_star
        self.hit: Optional[MetricsRow] = None
        self._grad_sum = 0.0
        self._count = 0

    def value(self, row: MetricsRow) -> float:
        metric = self.target.metric
        self._grad_sum += row.grad_norm_sq
        self._count += 1
        if metric is TargetMetric.GRAD_NORM_SQ:
            return row.grad_norm_sq
        if metric is TargetMetric.AVG_GRAD_NORM_SQ:
            return self._grad_sum / self._count
        if metric is TargetMetric.LOSS_GAP:
            return row.train_loss - self.f_star
        if metric is TargetMetric.TRAIN_LOSS:
            return row.train_loss
        if row.test_accuracy is None:
            raise ConfigError('target_metric test_acc needs a problem with a test set')
        return row.test_accuracy

    def observe(self, row: MetricsRow) -> bool:
        value = self.value(row)
        if self.hit is None:
            reached = value >= self.target.threshold if self.target.metric.higher_is_better else value <= self.target.threshold
            if reached:
                self.hit = row
                logger.debug(f'Target {self.target.describe()} reached at round {row.round} ({row.wall_clock:.6g}s)')
        return self.hit is not None


def first_hit(rows: Sequence[MetricsRow], target: Target, f_star: Optional[float] = None) -> Optional[MetricsRow]:
    tracker = TargetTracker(target, f_star)
    for row in rows:
        if tracker.observe(row):
            break
    return tracker.hit
