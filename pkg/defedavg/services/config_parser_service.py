import logging
import os
from typing import Any, Callable, Dict, Optional, Tuple

from defedavg.errors import ConfigError
from defedavg.models import presets
from defedavg.models.policy import AlgorithmKind
from defedavg.models.run_config import ProblemSpec, RateMode, RunConfig, SystemSpec, TargetMetric
from defedavg.models.state import SendPolicy

logger = logging.getLogger(__name__)

_TRUE = ('true', 'yes', 'on', '1')
_FALSE = ('false', 'no', 'off', '0')


def _int(value: str) -> int:
    number = float(value)
    if not number.is_integer():
        raise ValueError(f'expected an integer, got {value!r}')
    return int(number)


def _bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ValueError(f'expected a boolean, got {value!r}')


def _choice(*options: str) -> Callable[[str], str]:
    def convert(value: str) -> str:
        lowered = value.lower()
        if lowered not in options:
            raise ValueError(f'expected one of {", ".join(options)}, got {value!r}')
        return lowered
    return convert


# section -> key -> converter; the dataclass defaults cover missing keys
SCHEMA: Dict[str, Dict[str, Callable[[str], Any]]] = {
    'problem': {
        'kind': _choice('quadratic', 'logreg', 'mlp'),
        'N': _int,
        'dim': _int,
        'nu': float,
        'sigma': float,
        'gap': float,
        'dataset': _choice('synthetic', 'fashionmnist'),
        'samples': _int,
        'features': _int,
        'classes': _int,
        'test_samples': _int,
        'partition': _choice('iid', 'two_class'),
        'l2': float,
        'hidden': _int,
    },
    'algorithm': {
        'kind': _choice(*(k.value for k in AlgorithmKind)),
        'n': _int,
        'K': _int,
        'eta': float,
        'eta_bar': float,
        'batch': _int,
        'send_policy': _choice(*(p.value for p in SendPolicy)),
        'synchronous': _bool,
        'rates': _choice(*(m.value for m in RateMode)),
        'preset': str,
        'lambda': _int,
        'horizon': _int,
    },
    'system': {
        'profile': _choice('analytic', 'fashionmnist', 'cifar10'),
        'c_mac': float,
        'flops_per_iter': float,
        'bandwidth_down': float,
        'bandwidth_up': float,
        'model_bytes': float,
        'speed_min': float,
        'speed_max': float,
    },
    'run': {
        'T': _int,
        'seed': _int,
        'eval_every': _int,
        'trace': _bool,
        'target_metric': _choice(*(m.value for m in TargetMetric)),
        'target': float,
        'stop_at_target': _bool,
    },
}

Entries = Dict[Tuple[str, str], Tuple[Any, int]]


class ConfigParserService:
    """Parses the sectioned ``key = value`` run description into a RunConfig."""

    def parse_file(self, path: str) -> RunConfig:
        if not os.path.isfile(path):
            raise ConfigError(f'config file not found: {path}')
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
        logger.info(f'Parsing config {path}')
        return self.parse(text)

    def parse(self, text: str) -> RunConfig:
        entries = self._read_entries(text)
        return self._build(entries)

    def _read_entries(self, text: str) -> Entries:
        entries: Entries = {}
        section: Optional[str] = None
        for number, raw in enumerate(text.splitlines(), start=1):
            line = self._strip_comment(raw).strip()
            if not line:
                continue
            if line.startswith('['):
                if not line.endswith(']'):
                    raise ConfigError(f'malformed section header {line!r}', number)
                section = line[1:-1].strip().lower()
                if section not in SCHEMA:
                    raise ConfigError(f'unknown section [{section}]', number)
                continue
            if '=' not in line:
                raise ConfigError(f'expected "key = value", got {line!r}', number)
            if section is None:
                raise ConfigError('key outside of any section', number)
            key, value = (part.strip() for part in line.split('=', 1))
            key = self._canonical_key(section, key, number)
            if (section, key) in entries:
                raise ConfigError(f'duplicate key {section}.{key}', number)
            value = self._unquote(value)
            try:
                converted = SCHEMA[section][key](value)
            except ValueError as e:
                raise ConfigError(f'{section}.{key}: {e}', number)
            entries[(section, key)] = (converted, number)
        return entries

    def _canonical_key(self, section: str, key: str, number: int) -> str:
        for known in SCHEMA[section]:
            if known.lower() == key.lower():
                return known
        raise ConfigError(f'unknown key {section}.{key}', number)

    def _strip_comment(self, raw: str) -> str:
        stripped = raw.lstrip()
        if stripped.startswith('#') or stripped.startswith(';'):
            return ''
        marker = raw.find(' #')
        return raw if marker < 0 else raw[:marker]

    def _unquote(self, value: str) -> str:
        if len(value) >= 2 and value[0] == value[-1] and value[0] in ('"', "'"):
            return value[1:-1]
        return value

    def _build(self, entries: Entries) -> RunConfig:
        def get(section: str, key: str, default: Any = None) -> Any:
            entry = entries.get((section, key))
            return default if entry is None else entry[0]

        def line_of(section: str, key: str) -> Optional[int]:
            entry = entries.get((section, key))
            return None if entry is None else entry[1]

        if ('run', 'T') not in entries:
            raise ConfigError('missing key run.T')

        problem_values = {key: value for (section, key), (value, _) in entries.items() if section == 'problem'}
        system_values = {key: value for (section, key), (value, _) in entries.items() if section == 'system'}
        try:
            problem = ProblemSpec(**problem_values)
            system = SystemSpec(**system_values)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e))

        for key in ('N', 'dim', 'samples', 'features', 'hidden'):
            if getattr(problem, key) < 1:
                raise ConfigError(f'problem.{key} must be at least 1', line_of('problem', key))
        for key in ('nu', 'sigma', 'gap', 'l2'):
            if getattr(problem, key) < 0:
                raise ConfigError(f'problem.{key} must be nonnegative', line_of('problem', key))
        for key in ('c_mac', 'bandwidth_down', 'bandwidth_up', 'speed_min'):
            if getattr(system, key) <= 0:
                raise ConfigError(f'system.{key} must be positive', line_of('system', key))
        if system.speed_max < system.speed_min:
            raise ConfigError('system.speed_max must not be below speed_min', line_of('system', 'speed_max'))

        algorithm = AlgorithmKind(get('algorithm', 'kind', AlgorithmKind.DEFEDAVG_NIID.value))
        n = get('algorithm', 'n', 10)
        if not 1 <= n <= problem.N:
            raise ConfigError(f'algorithm.n={n} must lie in [1, N={problem.N}]',
                              line_of('algorithm', 'n') or line_of('problem', 'N'))
        for section, key, minimum in (('algorithm', 'K', 1), ('algorithm', 'batch', 1), ('algorithm', 'lambda', 1),
                                      ('algorithm', 'horizon', 1), ('run', 'T', 1), ('run', 'eval_every', 1)):
            value = get(section, key)
            if value is not None and value < minimum:
                raise ConfigError(f'{section}.{key} must be at least {minimum}, got {value}', line_of(section, key))
        for key in ('eta', 'eta_bar'):
            value = get('algorithm', key)
            if value is not None and value < 0:
                raise ConfigError(f'algorithm.{key} must be nonnegative', line_of('algorithm', key))

        synchronous = get('algorithm', 'synchronous', False)
        if synchronous and algorithm is not AlgorithmKind.DEFEDAVG_NIID:
            raise ConfigError('algorithm.synchronous only applies to defedavg_niid', line_of('algorithm', 'synchronous'))

        metric = get('run', 'target_metric')
        config = RunConfig(
            T=get('run', 'T'),
            problem=problem,
            algorithm=algorithm,
            n=n,
            K=get('algorithm', 'K', 50),
            eta=get('algorithm', 'eta', 1.0),
            eta_bar=get('algorithm', 'eta_bar', 0.01),
            batch=get('algorithm', 'batch', 10),
            send_policy=SendPolicy(get('algorithm', 'send_policy', SendPolicy.ALWAYS_OVERWRITE.value)),
            synchronous=synchronous,
            rates=RateMode(get('algorithm', 'rates', RateMode.MANUAL.value)),
            lam=get('algorithm', 'lambda', 1),
            horizon=get('algorithm', 'horizon'),
            system=system,
            seed=get('run', 'seed', 0),
            eval_every=get('run', 'eval_every', 1),
            trace=get('run', 'trace', False),
            target_metric=TargetMetric(metric) if metric is not None else None,
            target=get('run', 'target'),
            stop_at_target=get('run', 'stop_at_target', False),
        )

        preset = get('algorithm', 'preset', '')
        if preset or config.rates is RateMode.PRESET:
            explicit_kind = ('algorithm', 'kind') in entries
            line = line_of('algorithm', 'preset') or line_of('algorithm', 'rates')
            config = apply_preset(config, preset or None, line, keep_algorithm=explicit_kind)
        if config.algorithm is AlgorithmKind.ASYSG and config.K != 1:
            if ('algorithm', 'K') in entries:
                logger.warning(f'asysg runs without local steps; ignoring K={config.K}')
            config = config.with_overrides(K=1)
        return config


def preset_dataset(config: RunConfig) -> str:
    if config.system.profile in ('fashionmnist', 'cifar10'):
        return config.system.profile
    return config.problem.dataset


def apply_preset(config: RunConfig, name: Optional[str] = None, line: Optional[int] = None,
                 keep_algorithm: bool = False) -> RunConfig:
    """Replace eta/eta_bar (and the algorithm when not pinned) with a tuned preset."""
    if not name:
        name = presets.preset_name(config.algorithm.value, preset_dataset(config), config.n,
                                   iid=config.problem.partition == 'iid')
    try:
        eta, eta_bar = presets.lookup(name)
    except KeyError:
        raise ConfigError(f'unknown preset {name!r}', line)
    algorithm = AlgorithmKind(presets.preset_algorithm(name))
    if keep_algorithm and algorithm is not config.algorithm:
        raise ConfigError(f'preset {name!r} belongs to {algorithm.value}, config runs {config.algorithm.value}', line)
    changes = {'algorithm': algorithm, 'eta': eta, 'rates': RateMode.PRESET, 'preset': name.strip().lower()}
    if eta_bar is not None:
        changes['eta_bar'] = eta_bar
    logger.info(f'Applied preset {name}: eta={eta} eta_bar={eta_bar}')
    try:
        return config.with_overrides(**changes)
    except ValueError as e:
        raise ConfigError(str(e), line)


def parse_config(text: str) -> RunConfig:
    return ConfigParserService().parse(text)
