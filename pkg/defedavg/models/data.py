from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np

from defedavg.errors import DatasetError


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: Optional[int] = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise DatasetError(f'dataset needs a nonempty 2-D feature matrix, got shape {self.features.shape}')
        if self.labels.shape != (self.features.shape[0],):
            raise DatasetError(f'{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels')
        if not np.all(np.isfinite(self.features)):
            raise DatasetError('dataset features contain non-finite values')
        if self.labels.size and self.labels.min() < 0:
            raise DatasetError('labels must be nonnegative')
        if self.num_classes is None:
            object.__setattr__(self, 'num_classes', int(self.labels.max()) + 1)
        elif self.labels.max() >= self.num_classes:
            raise DatasetError(f'label {int(self.labels.max())} outside [0, {self.num_classes})')

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])


class PartitionScheme(Enum):
    IID = 'iid'
    TWO_CLASS = 'two_class'


@dataclass(frozen=True)
class Partition:
    assignment: List[np.ndarray]
    scheme: PartitionScheme

    @property
    def num_clients(self) -> int:
        return len(self.assignment)

    def shard_sizes(self) -> List[int]:
        return [int(a.size) for a in self.assignment]
