import logging

from defedavg.errors import ConfigError, DatasetError, DeFedAvgError, VerificationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERIFICATION = 2


def register_error_handlers(app):
    @app.errorhandler(ConfigError)
    def config_error(e):
        logger.error(f'Configuration error: {e}')
        return EXIT_ERROR

    @app.errorhandler(FileNotFoundError)
    def missing_file(e):
        logger.error(f'File not found: {e.filename or e}')
        return EXIT_ERROR

    @app.errorhandler(DatasetError)
    def dataset_error(e):
        logger.error(f'Dataset error: {e}')
        return EXIT_ERROR

    @app.errorhandler(VerificationError)
    def verification_failed(e):
        logger.error(f'Verification failed: {e} {e.failed}')
        return EXIT_VERIFICATION

    @app.errorhandler(DeFedAvgError)
    def library_error(e):
        logger.error(f'{type(e).__name__}: {e}')
        return EXIT_ERROR

    @app.errorhandler(Exception)
    def internal_error(e):
        logger.exception(f'Internal error: {e}')
        return EXIT_ERROR
