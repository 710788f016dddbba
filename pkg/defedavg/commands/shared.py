import json
import os
from typing import Any

from defedavg.config import Config
from defedavg.models.run_config import RunConfig
from defedavg.services.config_parser_service import ConfigParserService, apply_preset


def add_config_arguments(parser, out_help: str = 'output CSV path', with_out: bool = True) -> None:
    parser.add_argument('config', help='run configuration file')
    parser.add_argument('--seed', type=int, default=None, help='override run.seed')
    if with_out:
        parser.add_argument('--out', default=None, help=out_help)
    parser.add_argument('--preset', default=None, help='tuned rates, e.g. defedavg_iid/fashionmnist/n10')


def load_config(args) -> RunConfig:
    config = ConfigParserService().parse_file(args.config)
    if args.preset:
        config = apply_preset(config, args.preset)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    return config


def output_path(args, config: Config, default_name: str) -> str:
    return args.out or os.path.join(config.OUTPUT_DIR, default_name)


def emit(payload: Any) -> None:
    print(json.dumps(payload, indent=2))
