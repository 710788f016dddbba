from defedavg.commands.shared import add_config_arguments, emit, load_config
from defedavg.services.sweep_service import grid_search, parse_int_list, parse_seeds


def register(subparsers) -> str:
    parser = subparsers.add_parser('tune', help='grid-search eta and eta_bar for the fastest wall-clock to target')
    add_config_arguments(parser, with_out=False)
    parser.add_argument('--n', dest='n_values', default=None, help='comma-separated participant counts')
    parser.add_argument('--seeds', default=None, help='seed list, e.g. 1..3')
    parser.add_argument('--workers', type=int, default=None, help='parallel processes')
    parser.set_defaults(handler=handle)
    return 'tune'


def handle(args, app_config) -> int:
    config = load_config(args)
    n_values = parse_int_list(args.n_values) if args.n_values else [config.n]
    seeds = parse_seeds(args.seeds) if args.seeds else [config.seed]
    report = grid_search(config, n_values, seeds, workers=args.workers)
    best = {}
    for n in n_values:
        choice = report.best(n)
        best[str(n)] = None if choice is None else {'eta': choice[0], 'eta_bar': choice[1], 'mean_time_s': choice[2]}
    emit({'target': report.target.describe(), 'best': best})
    return 0
