from defedavg.commands.shared import add_config_arguments, emit, load_config
from defedavg.errors import VerificationError
from defedavg.services.numerics_service import derive_stream
from defedavg.services.problem_service import build_problem
from defedavg.services.verification_service import gradient_check

TOLERANCE = 1e-5


def register(subparsers) -> str:
    parser = subparsers.add_parser('gradcheck', help='compare analytic gradients with central differences')
    add_config_arguments(parser, with_out=False)
    parser.add_argument('--probes', type=int, default=20)
    parser.set_defaults(handler=handle)
    return 'gradcheck'


def handle(args, app_config) -> int:
    config = load_config(args)
    problem = build_problem(config.problem, config.seed)
    error = gradient_check(problem, args.probes, derive_stream(config.seed, 'gradcheck'), batch=config.batch)
    emit({'problem': problem.kind.value, 'dim': problem.dim, 'probes': args.probes, 'max_rel_error': error})
    if error > TOLERANCE:
        raise VerificationError(f'gradient relative error {error:.3g} exceeds {TOLERANCE:g}', ['gradcheck'])
    return 0
