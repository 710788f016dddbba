import logging

from defedavg.commands.shared import add_config_arguments, emit, load_config, output_path
from defedavg.repository.metricsRepository import MetricsRepository
from defedavg.services.sweep_service import parse_int_list, parse_seeds, sweep

logger = logging.getLogger(__name__)


def register(subparsers) -> str:
    parser = subparsers.add_parser('sweep', help='rounds and wall-clock to target over n and seeds')
    add_config_arguments(parser, out_help='sweep CSV path')
    parser.add_argument('--n', dest='n_values', default=None, help='comma-separated participant counts')
    parser.add_argument('--seeds', default=None, help='seed list, e.g. 1..10 or 1,2,5')
    parser.add_argument('--workers', type=int, default=None, help='parallel processes (default DEFEDAVG_WORKERS)')
    parser.set_defaults(handler=handle)
    return 'sweep'


def handle(args, app_config) -> int:
    config = load_config(args)
    n_values = parse_int_list(args.n_values) if args.n_values else [config.n]
    seeds = parse_seeds(args.seeds) if args.seeds else [config.seed]
    table = sweep(config, n_values, seeds, workers=args.workers)
    path = output_path(args, app_config, f'sweep_{config.algorithm.value}.csv')
    MetricsRepository.write_sweep_csv(table.cells, table.summaries, path)
    logger.info(f'Wrote {len(table.cells)} sweep cells to {path}')
    emit({
        'sweep': path,
        'target': table.target.describe(),
        'mean_rounds': {str(s.n): s.mean_rounds for s in table.summaries},
        'mean_time_s': {str(s.n): s.mean_time for s in table.summaries},
    })
    return 0
