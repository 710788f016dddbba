import argparse
import logging
from typing import Callable, Dict, List, Optional, Type

from dotenv import load_dotenv

from defedavg.config import Config
from defedavg.errors import ConfigError

logger = logging.getLogger(__name__)

ErrorHandler = Callable[[BaseException], int]


class UsageError(ConfigError):
    pass


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f'{self.prog}: {message}')


class App:
    """Command-line application: subcommands plus exception-to-exit-code handlers."""

    def __init__(self, prog: str = 'defedavg', config: Optional[Config] = None):
        self.config = config or Config()
        self.parser = CliParser(prog=prog, description='Asynchronous federated learning simulator')
        self.subparsers = self.parser.add_subparsers(dest='command', metavar='command')
        self.commands: List[str] = []
        self._handlers: Dict[Type[BaseException], ErrorHandler] = {}

    def register_command(self, register: Callable[[argparse._SubParsersAction], str]) -> None:
        self.commands.append(register(self.subparsers))

    def errorhandler(self, exc_type: Type[BaseException]):
        def decorator(handler: ErrorHandler) -> ErrorHandler:
            self._handlers[exc_type] = handler
            return handler
        return decorator

    def handle_error(self, error: BaseException) -> int:
        for cls in type(error).__mro__:
            if cls in self._handlers:
                return self._handlers[cls](error)
        raise error

    def run(self, argv: Optional[List[str]] = None) -> int:
        try:
            args = self.parser.parse_args(argv)
            if not getattr(args, 'handler', None):
                self.parser.print_help()
                return 1
            return args.handler(args, self.config) or 0
        except Exception as e:
            return self.handle_error(e)


def create_app(config: Optional[Config] = None) -> App:
    load_dotenv()
    app = App(config=config)

    # Register commands
    from defedavg.commands import gradcheck, rates, run, sweep, tune, verify

    app.register_command(run.register)
    app.register_command(sweep.register)
    app.register_command(verify.register)
    app.register_command(rates.register)
    app.register_command(gradcheck.register)
    app.register_command(tune.register)

    # Register error handlers
    from defedavg.middleware.error_handlers import register_error_handlers
    register_error_handlers(app)

    return app
