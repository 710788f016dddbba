import pytest

from defedavg.errors import ConfigError
from defedavg.models.policy import AlgorithmKind
from defedavg.models.run_config import ProblemSpec, RunConfig, SystemSpec, TargetMetric
from defedavg.repository.metricsRepository import MetricsRepository
from defedavg.services.sweep_service import grid_search, parse_int_list, parse_seeds, sweep


def _base(target=0.05, T=200):
    return RunConfig(T=T, problem=ProblemSpec(kind='quadratic', N=12, dim=4, nu=0.3, sigma=0.0),
                     algorithm=AlgorithmKind.DEFEDAVG_NIID, n=2, K=2, eta=1.0, eta_bar=0.1, batch=1,
                     system=SystemSpec(flops_per_iter=1e5), target_metric=TargetMetric.GRAD_NORM_SQ,
                     target=target)


def test_parse_seeds():
    assert parse_seeds('1..3') == [1, 2, 3]
    assert parse_seeds('1,3,5..7') == [1, 3, 5, 6, 7]
    with pytest.raises(ConfigError):
        parse_seeds('3..1')
    with pytest.raises(ConfigError):
        parse_seeds(' , ')


def test_parse_int_list():
    assert parse_int_list('2,4,8') == [2, 4, 8]
    with pytest.raises(ConfigError):
        parse_int_list('2,four')


def test_one_n_three_seeds():
    table = sweep(_base(), [4], [1, 2, 3], workers=1)
    assert [(c.n, c.seed) for c in table.cells] == [(4, 1), (4, 2), (4, 3)]
    assert all(c.reached for c in table.cells)
    summary = table.summary(4)
    assert summary.reached == 3
    assert summary.mean_rounds == pytest.approx(sum(c.rounds_to_target for c in table.cells) / 3)


def test_unreachable_target_gives_sentinel(tmp_path):
    table = sweep(_base(target=1e-30, T=5), [2], [1, 2], workers=1)
    assert not any(c.reached for c in table.cells)
    assert table.summary(2).mean_rounds is None
    path = MetricsRepository.write_sweep_csv(table.cells, table.summaries, str(tmp_path / 'sweep.csv'))
    assert 'unreached' in open(path, encoding='utf-8').read()


def test_parallel_sweep_writes_the_same_bytes(tmp_path):
    serial = sweep(_base(), [2, 4], [1, 2], workers=1)
    parallel = sweep(_base(), [2, 4], [1, 2], workers=2)
    a = MetricsRepository.write_sweep_csv(serial.cells, serial.summaries, str(tmp_path / 'serial.csv'))
    b = MetricsRepository.write_sweep_csv(parallel.cells, parallel.summaries, str(tmp_path / 'parallel.csv'))
    assert open(a, 'rb').read() == open(b, 'rb').read()


def test_sweep_validates_n_values():
    with pytest.raises(ConfigError):
        sweep(_base(), [13], [1], workers=1)
    with pytest.raises(ConfigError):
        sweep(_base(), [], [1], workers=1)


def test_grid_search_picks_a_reaching_pair():
    report = grid_search(_base(T=100), [3], [1], etas=(1.0,), eta_bars=(0.001, 0.1), workers=1)
    best = report.best(3)
    assert best is not None
    assert best[:2] == (1.0, 0.1)
    assert report.trials[(3, 1.0, 0.001)].mean_time is None
