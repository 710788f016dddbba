import logging
from typing import Dict, List, Union

import numpy as np

from defedavg.errors import DatasetError
from defedavg.models.data import Dataset, Partition, PartitionScheme
from defedavg.services.numerics_service import derive_stream

logger = logging.getLogger(__name__)


def partition(dataset: Dataset, scheme: Union[str, PartitionScheme], num_clients: int, seed: int) -> Partition:
    scheme = PartitionScheme(scheme)
    if num_clients < 1:
        raise DatasetError(f'need at least one client, got {num_clients}')
    rng = derive_stream(seed, f'partition/{scheme.value}')

    if scheme is PartitionScheme.IID:
        assignment = _split_iid(dataset, num_clients, rng)
    else:
        assignment = _split_two_class(dataset, num_clients, rng)

    empty = [i for i, shard in enumerate(assignment) if shard.size == 0]
    if empty:
        raise DatasetError(f'clients {empty[:10]} would receive an empty shard ({dataset.size} samples, {num_clients} clients)')
    logger.debug(f'Partitioned {dataset.size} samples over {num_clients} clients ({scheme.value})')
    return Partition(assignment=assignment, scheme=scheme)


def _split_iid(dataset: Dataset, num_clients: int, rng) -> List[np.ndarray]:
    order = rng.permutation(dataset.size)
    return [np.sort(chunk) for chunk in np.array_split(order, num_clients)]


def _split_two_class(dataset: Dataset, num_clients: int, rng) -> List[np.ndarray]:
    classes = np.unique(dataset.labels)
    if classes.size < 2:
        raise DatasetError('two_class partition needs at least 2 distinct labels')

    shuffled = classes[rng.permutation(classes.size)]
    holders: Dict[int, List[int]] = {int(c): [] for c in classes}
    for i in range(num_clients):
        first = int(shuffled[(2 * i) % classes.size])
        second = int(shuffled[(2 * i + 1) % classes.size])
        holders[first].append(i)
        holders[second].append(i)

    pieces: List[List[np.ndarray]] = [[] for _ in range(num_clients)]
    for c in classes:
        owners = holders[int(c)]
        if not owners:
            continue
        members = np.flatnonzero(dataset.labels == c)
        members = members[rng.permutation(members.size)]
        if members.size < len(owners):
            raise DatasetError(f'class {int(c)} has {members.size} samples for {len(owners)} clients; some shard would miss a label')
        for owner, chunk in zip(owners, np.array_split(members, len(owners))):
            pieces[owner].append(chunk)

    return [np.sort(np.concatenate(p)) if p else np.array([], dtype=np.int64) for p in pieces]
