import os
import pytest

os.environ['DEFEDAVG_LOG_LEVEL'] = 'WARNING'
os.environ['DEFEDAVG_WORKERS'] = '1'

from defedavg.app import create_app
from defedavg.config import Config
from defedavg.models.data import PartitionScheme
from defedavg.repository.datasetRepository import DatasetRepository
from defedavg.services.partition_service import partition
from defedavg.services.problem_service import make_logreg, make_mlp, make_quadratic


@pytest.fixture
def app(tmp_path):
    config = Config()
    config.OUTPUT_DIR = str(tmp_path / 'results')
    return create_app(config)


@pytest.fixture
def quadratic():
    return make_quadratic(6, 4, 0.5, 1.0, seed=1)


@pytest.fixture
def synthetic_data():
    return DatasetRepository.synthetic_classification(120, 5, 3, seed=2, test_samples=40)


@pytest.fixture
def logreg_problem(synthetic_data):
    train, test = synthetic_data
    shards = partition(train, PartitionScheme.IID, 4, seed=2)
    return make_logreg(train, shards, l2=0.01, test_set=test)


@pytest.fixture
def mlp_problem(synthetic_data):
    train, test = synthetic_data
    shards = partition(train, PartitionScheme.IID, 4, seed=2)
    return make_mlp(train, shards, 5, seed=2, l2=0.01, test_set=test)


@pytest.fixture
def config_text():
    """Builds config file text from per-section dicts layered over a small quadratic run."""
    def build(**sections):
        base = {
            'problem': {'kind': 'quadratic', 'N': 10, 'dim': 4, 'nu': 0.5, 'sigma': 1.0},
            'algorithm': {'kind': 'defedavg_niid', 'n': 3, 'K': 2, 'eta': 1.0, 'eta_bar': 0.05, 'batch': 1},
            'system': {},
            'run': {'T': 10, 'seed': 1},
        }
        for name, values in sections.items():
            base.setdefault(name, {}).update(values)
        lines = []
        for name, values in base.items():
            lines.append(f'[{name}]')
            lines.extend(f'{key} = {value}' for key, value in values.items())
            lines.append('')
        return '\n'.join(lines)
    return build


@pytest.fixture
def config_file(tmp_path, config_text):
    def write(name='run.ini', **sections):
        path = tmp_path / name
        path.write_text(config_text(**sections), encoding='utf-8')
        return str(path)
    return write
