import logging

from defedavg.commands.shared import emit
from defedavg.errors import ConfigError, VerificationError
from defedavg.services.verification_service import SUITE, run_suite

logger = logging.getLogger(__name__)


def register(subparsers) -> str:
    parser = subparsers.add_parser('verify', help='run the invariant suite on synthetic problems')
    parser.add_argument('--only', default=None, help=f'comma-separated subset of: {", ".join(SUITE)}')
    parser.set_defaults(handler=handle)
    return 'verify'


def handle(args, app_config) -> int:
    only = [name.strip() for name in args.only.split(',') if name.strip()] if args.only else None
    try:
        report = run_suite(only)
    except KeyError as e:
        raise ConfigError(str(e.args[0]))
    emit(report.to_dict())
    if not report.passed:
        logger.warning(f'Failed checks: {", ".join(report.failed)}')
        raise VerificationError(f'{len(report.failed)} check(s) failed', report.failed)
    return 0
