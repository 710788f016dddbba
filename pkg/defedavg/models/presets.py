"""Tuned (eta, eta_bar) pairs per algorithm, dataset and participants per round.

Keys read ``<algorithm>/<dataset>/n<participants>``. FedAvg was tuned separately
for the IID and non-IID settings, so it appears as ``fedavg_iid`` and
``fedavg_niid``. AsySG has a single rate, stored as eta with eta_bar None.
Cells that were never tuned (n=5 for most baselines) are absent.

Every cell is transcribed from the appendix table of best-tuned global and
local learning rates; the comment above each group names the table block,
algorithm row and dataset column it was read from.
"""
from types import MappingProxyType
from typing import Dict, Optional, Tuple

PresetRates = Tuple[float, Optional[float]]

_TABLE: Dict[str, PresetRates] = {
    # learning-rate table, IID block, FedAvg row, FashionMNIST column (n=5 is N/A)
    'fedavg_iid/fashionmnist/n10': (1.0, 0.10),
    'fedavg_iid/fashionmnist/n20': (1.0, 0.01),
    'fedavg_iid/fashionmnist/n40': (1.0, 0.01),
    'fedavg_iid/fashionmnist/n80': (1.0, 0.01),
    # learning-rate table, IID block, AsySG row, FashionMNIST column (eta only, n=5 is N/A)
    'asysg/fashionmnist/n10': (0.10, None),
    'asysg/fashionmnist/n20': (0.10, None),
    'asysg/fashionmnist/n40': (0.10, None),
    'asysg/fashionmnist/n80': (0.10, None),
    # learning-rate table, IID block, DeFedAvg-IID row, FashionMNIST column
    'defedavg_iid/fashionmnist/n5': (0.1, 0.05),
    'defedavg_iid/fashionmnist/n10': (0.1, 0.05),
    'defedavg_iid/fashionmnist/n20': (0.1, 0.05),
    'defedavg_iid/fashionmnist/n40': (0.1, 0.05),
    'defedavg_iid/fashionmnist/n80': (1.0, 0.10),
    # learning-rate table, IID block, FedAvg row, CIFAR-10 column (n=5 is N/A)
    'fedavg_iid/cifar10/n10': (1.0, 0.01),
    'fedavg_iid/cifar10/n20': (1.0, 0.01),
    'fedavg_iid/cifar10/n40': (1.0, 0.01),
    'fedavg_iid/cifar10/n80': (1.0, 0.01),
    # learning-rate table, IID block, AsySG row, CIFAR-10 column (eta only, n=5 is N/A)
    'asysg/cifar10/n10': (0.10, None),
    'asysg/cifar10/n20': (0.10, None),
    'asysg/cifar10/n40': (0.10, None),
    'asysg/cifar10/n80': (0.10, None),
    # learning-rate table, IID block, DeFedAvg-IID row, CIFAR-10 column
    'defedavg_iid/cifar10/n5': (0.1, 0.05),
    'defedavg_iid/cifar10/n10': (1.0, 0.05),
    'defedavg_iid/cifar10/n20': (0.1, 0.01),
    'defedavg_iid/cifar10/n40': (0.1, 0.05),
    'defedavg_iid/cifar10/n80': (1.0, 0.01),
    # learning-rate table, non-IID block, FedAvg row, FashionMNIST column (n=5 is N/A)
    'fedavg_niid/fashionmnist/n10': (0.1, 0.05),
    'fedavg_niid/fashionmnist/n20': (0.1, 0.05),
    'fedavg_niid/fashionmnist/n40': (1.0, 0.01),
    'fedavg_niid/fashionmnist/n80': (0.1, 0.10),
    # learning-rate table, non-IID block, FedBuff row, FashionMNIST column (n=5 is N/A)
    'fedbuff/fashionmnist/n10': (0.1, 0.005),
    'fedbuff/fashionmnist/n20': (0.1, 0.01),
    'fedbuff/fashionmnist/n40': (0.1, 0.01),
    'fedbuff/fashionmnist/n80': (0.1, 0.05),
    # learning-rate table, non-IID block, DeFedAvg-nIID row, FashionMNIST column
    'defedavg_niid/fashionmnist/n5': (0.1, 0.05),
    'defedavg_niid/fashionmnist/n10': (0.1, 0.05),
    'defedavg_niid/fashionmnist/n20': (0.1, 0.05),
    'defedavg_niid/fashionmnist/n40': (0.1, 0.05),
    'defedavg_niid/fashionmnist/n80': (0.1, 0.05),
    # learning-rate table, non-IID block, FedAvg row, CIFAR-10 column (n=5 is N/A)
    'fedavg_niid/cifar10/n10': (1.0, 0.01),
    'fedavg_niid/cifar10/n20': (1.0, 0.01),
    'fedavg_niid/cifar10/n40': (0.1, 0.05),
    'fedavg_niid/cifar10/n80': (0.1, 0.05),
    # learning-rate table, non-IID block, FedBuff row, CIFAR-10 column (n=5 is N/A)
    'fedbuff/cifar10/n10': (0.1, 0.01),
    'fedbuff/cifar10/n20': (0.1, 0.01),
    'fedbuff/cifar10/n40': (0.1, 0.01),
    'fedbuff/cifar10/n80': (0.1, 0.05),
    # learning-rate table, non-IID block, DeFedAvg-nIID row, CIFAR-10 column
    'defedavg_niid/cifar10/n5': (0.1, 0.05),
    'defedavg_niid/cifar10/n10': (0.1, 0.05),
    'defedavg_niid/cifar10/n20': (0.1, 0.10),
    'defedavg_niid/cifar10/n40': (0.1, 0.05),
    'defedavg_niid/cifar10/n80': (0.1, 0.05),
}

PRESETS = MappingProxyType(_TABLE)


def lookup(name: str) -> PresetRates:
    key = name.strip().lower()
    if key not in PRESETS:
        raise KeyError(f'unknown preset {name!r}')
    return PRESETS[key]


def preset_algorithm(name: str) -> str:
    algorithm = name.strip().lower().split('/')[0]
    return 'fedavg' if algorithm.startswith('fedavg_') else algorithm


def preset_name(algorithm: str, dataset: str, n: int, iid: bool) -> str:
    if algorithm == 'fedavg':
        algorithm = 'fedavg_iid' if iid else 'fedavg_niid'
    return f'{algorithm}/{dataset}/n{n}'
