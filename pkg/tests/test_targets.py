import pytest

from defedavg.errors import ConfigError
from defedavg.models.metrics import MetricsRow
from defedavg.models.run_config import ProblemSpec, RunConfig, TargetMetric
from defedavg.services.target_service import DEFAULT_EPSILON, Target, TargetTracker, first_hit, resolve_target


def _row(t, grad=1.0, loss=2.0, acc=None):
    return MetricsRow(round=t, wall_clock=float(t), train_loss=loss, grad_norm_sq=grad, test_accuracy=acc,
                      mean_staleness=0.0, max_staleness=0)


def test_default_targets():
    quadratic = RunConfig(T=5, problem=ProblemSpec(N=10), n=2)
    assert resolve_target(quadratic) == Target(TargetMetric.GRAD_NORM_SQ, DEFAULT_EPSILON)
    fashion = RunConfig(T=5, problem=ProblemSpec(kind='mlp', N=10, dataset='fashionmnist', partition='two_class'), n=2)
    assert resolve_target(fashion) == Target(TargetMetric.TEST_ACC, 0.8)


def test_accuracy_target_needs_a_threshold_on_synthetic_data():
    config = RunConfig(T=5, problem=ProblemSpec(kind='logreg', N=10), n=2, target_metric=TargetMetric.TEST_ACC)
    with pytest.raises(ConfigError):
        resolve_target(config)


def test_first_hit_for_lower_and_higher_is_better():
    rows = [_row(0, grad=3.0, acc=0.2), _row(1, grad=0.5, acc=0.6), _row(2, grad=0.1, acc=0.9)]
    assert first_hit(rows, Target(TargetMetric.GRAD_NORM_SQ, 0.5)).round == 1
    assert first_hit(rows, Target(TargetMetric.TEST_ACC, 0.85)).round == 2
    assert first_hit(rows, Target(TargetMetric.GRAD_NORM_SQ, 0.01)) is None


def test_running_average_of_gradient_norms():
    rows = [_row(0, grad=3.0), _row(1, grad=1.0), _row(2, grad=0.5)]
    assert first_hit(rows, Target(TargetMetric.AVG_GRAD_NORM_SQ, 1.4)) is None
    assert first_hit(rows, Target(TargetMetric.AVG_GRAD_NORM_SQ, 2.0)).round == 1


def test_loss_gap_uses_the_known_optimum():
    rows = [_row(0, loss=2.0), _row(1, loss=1.2)]
    assert first_hit(rows, Target(TargetMetric.LOSS_GAP, 0.25), f_star=1.0).round == 1
    with pytest.raises(ConfigError):
        TargetTracker(Target(TargetMetric.LOSS_GAP, 0.1))


def test_accuracy_target_without_test_set():
    tracker = TargetTracker(Target(TargetMetric.TEST_ACC, 0.5))
    with pytest.raises(ConfigError):
        tracker.observe(_row(0))


def test_describe():
    assert Target(TargetMetric.TEST_ACC, 0.9).describe() == 'test_acc >= 0.9'
    assert Target(TargetMetric.GRAD_NORM_SQ, 0.01).describe() == 'grad_norm_sq <= 0.01'
