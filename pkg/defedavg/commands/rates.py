from defedavg.commands.shared import add_config_arguments, emit, load_config
from defedavg.services.problem_service import build_problem
from defedavg.services.theory_service import iid_rates, lambda_bound, niid_rates, problem_constants


def register(subparsers) -> str:
    parser = subparsers.add_parser('rates', help='print the theorem learning rates and bounds for a configuration')
    add_config_arguments(parser, with_out=False)
    parser.add_argument('--delta', type=float, default=0.01, help='failure probability for the delay bound')
    parser.set_defaults(handler=handle)
    return 'rates'


def handle(args, app_config) -> int:
    config = load_config(args)
    problem = build_problem(config.problem, config.seed)
    constants = problem_constants(problem, config.seed)
    horizon = config.horizon or config.T
    emit({
        'constants': {
            'L': constants.L, 'sigma': constants.sigma, 'G': constants.G, 'nu': constants.nu,
            'gap': constants.gap, 'estimated': constants.estimated,
        },
        'niid': niid_rates(config.n, config.K, constants, horizon, config.lam).to_dict(),
        'iid': iid_rates(config.n, config.K, constants, horizon, config.lam).to_dict(),
        'lambda_bound': lambda_bound(config.N, config.n, horizon, args.delta),
    })
    return 0
