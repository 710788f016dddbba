import logging

from defedavg.commands.shared import add_config_arguments, emit, load_config, output_path
from defedavg.repository.metricsRepository import MetricsRepository
from defedavg.services.simulator_service import run as run_simulation, staleness_report

logger = logging.getLogger(__name__)


def register(subparsers) -> str:
    parser = subparsers.add_parser('run', help='simulate one configuration and write its metrics CSV')
    add_config_arguments(parser)
    parser.set_defaults(handler=handle)
    return 'run'


def handle(args, app_config) -> int:
    config = load_config(args)
    result = run_simulation(config)
    path = output_path(args, app_config, f'{config.algorithm.value}_seed{config.seed}.csv')
    MetricsRepository.write_metrics_csv(result, path)
    logger.info(f'Wrote {len(result.rows)} metric rows to {path}')
    last = result.rows[-1]
    summary = {
        'metrics': path,
        'rounds': result.rounds_completed,
        'wall_clock_s': last.wall_clock,
        'train_loss': last.train_loss,
        'grad_norm_sq': last.grad_norm_sq,
        'stale_broadcasts': result.stale_broadcasts,
        'dropped_updates': result.dropped_updates,
    }
    if result.participation_log:
        summary['staleness'] = staleness_report(result).to_dict()
    emit(summary)
    return 0
