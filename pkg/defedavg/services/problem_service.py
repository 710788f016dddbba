import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np

from defedavg.errors import DatasetError, ProblemError
from defedavg.models.data import Dataset, Partition
from defedavg.models.run_config import ProblemSpec
from defedavg.repository.datasetRepository import DatasetRepository
from defedavg.services.numerics_service import RngStream, Weights, derive_stream
from defedavg.services.partition_service import partition

logger = logging.getLogger(__name__)


class ProblemKind(Enum):
    QUADRATIC = 'quadratic'
    LOGREG = 'logreg'
    MLP = 'mlp'


@dataclass(frozen=True)
class KnownOptimum:
    f_star: float
    w_star: Weights


class Problem(ABC):
    """Federated objective F(w) = (1/N) sum_i F_i(w) with a stochastic oracle per client."""

    kind: ProblemKind
    dim: int
    num_clients: int
    noise_sigma: Optional[float] = None
    hetero_nu: Optional[float] = None
    smoothness: Optional[float] = None
    known_optimum: Optional[KnownOptimum] = None

    @abstractmethod
    def initial_weights(self) -> Weights:
        ...

    @abstractmethod
    def client_loss(self, client: int, w: Weights) -> float:
        ...

    @abstractmethod
    def client_gradient(self, client: int, w: Weights) -> Weights:
        ...

    @abstractmethod
    def _sample_gradient(self, client: int, w: Weights, batch: int, rng: RngStream) -> Weights:
        ...

    @abstractmethod
    def flops_per_iter(self, batch: int) -> float:
        ...

    def loss(self, w: Weights) -> float:
        return float(np.mean([self.client_loss(i, w) for i in range(self.num_clients)]))

    def gradient(self, w: Weights) -> Weights:
        total = np.zeros(self.dim)
        for i in range(self.num_clients):
            total += self.client_gradient(i, w)
        return total / self.num_clients

    def stochastic_gradient(self, client: int, w: Weights, batch: int, rng: RngStream) -> Weights:
        self.check_client(client)
        return self._sample_gradient(client, w, batch, rng)

    def accuracy(self, w: Weights) -> Optional[float]:
        return None

    def model_bytes(self) -> float:
        return 8.0 * self.dim

    def check_client(self, client: Union[int, np.ndarray]) -> None:
        if isinstance(client, np.ndarray):
            bad = client[(client < 0) | (client >= self.num_clients)]
            if bad.size:
                raise ProblemError(f'client indices {bad.tolist()} out of range [0, {self.num_clients})')
        elif not 0 <= client < self.num_clients:
            raise ProblemError(f'client index {client} out of range [0, {self.num_clients})')


class QuadraticProblem(Problem):
    kind = ProblemKind.QUADRATIC

    def __init__(self, centers: np.ndarray, sigma: float, hetero_nu: float):
        self.centers = centers
        self.num_clients, self.dim = centers.shape
        self.center_mean = centers.mean(axis=0)
        self.noise_sigma = float(sigma)
        self.hetero_nu = float(hetero_nu)
        self.smoothness = 1.0
        spread = 0.5 * float(np.mean(np.sum((centers - self.center_mean) ** 2, axis=1)))
        self.known_optimum = KnownOptimum(f_star=spread, w_star=self.center_mean.copy())
        self._noise_scale = self.noise_sigma / np.sqrt(self.dim)

    def initial_weights(self) -> Weights:
        return np.zeros(self.dim)

    def client_loss(self, client: int, w: Weights) -> float:
        self.check_client(client)
        diff = w - self.centers[client]
        return 0.5 * float(diff @ diff)

    def client_gradient(self, client: int, w: Weights) -> Weights:
        self.check_client(client)
        return w - self.centers[client]

    def loss(self, w: Weights) -> float:
        diff = w - self.center_mean
        return 0.5 * float(diff @ diff) + self.known_optimum.f_star

    def gradient(self, w: Weights) -> Weights:
        return w - self.center_mean

    def _sample_gradient(self, client: Union[int, np.ndarray], w: Weights, batch: int, rng: RngStream) -> Weights:
        # client may be an index array with w stacked row-wise
        grad = w - self.centers[client]
        if self.noise_sigma == 0.0:
            return grad
        return grad + self._noise_scale * rng.normal(size=grad.shape)

    def flops_per_iter(self, batch: int) -> float:
        return 4.0 * self.dim


class ClassificationProblem(Problem):
    """Softmax classifier trained on per-client data shards."""

    def __init__(self, dataset: Dataset, partition: Partition, l2: float, test_set: Optional[Dataset]):
        if l2 < 0:
            raise ProblemError(f'l2 must be nonnegative, got {l2}')
        empty = [i for i, shard in enumerate(partition.assignment) if shard.size == 0]
        if empty:
            raise ProblemError(f'empty shard for clients {empty}')
        self.dataset = dataset
        self.partition = partition
        self.l2 = float(l2)
        self.test_set = test_set
        self.num_classes = int(dataset.num_classes)
        self.input_dim = dataset.input_dim
        self.num_clients = partition.num_clients
        self.shards: List[Tuple[np.ndarray, np.ndarray]] = [
            (dataset.features[idx], dataset.labels[idx]) for idx in partition.assignment
        ]

    @abstractmethod
    def logits(self, w: Weights, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def loss_and_gradient(self, w: Weights, x: np.ndarray, y: np.ndarray) -> Tuple[float, Weights]:
        ...

    def batch_loss(self, w: Weights, x: np.ndarray, y: np.ndarray) -> float:
        z = self.logits(w, x)
        return float(np.mean(_logsumexp(z) - z[np.arange(y.size), y])) + 0.5 * self.l2 * float(w @ w)

    def client_loss(self, client: int, w: Weights) -> float:
        self.check_client(client)
        x, y = self.shards[client]
        return self.batch_loss(w, x, y)

    def client_gradient(self, client: int, w: Weights) -> Weights:
        self.check_client(client)
        x, y = self.shards[client]
        return self.loss_and_gradient(w, x, y)[1]

    def _sample_gradient(self, client: int, w: Weights, batch: int, rng: RngStream) -> Weights:
        if batch < 1:
            raise ProblemError(f'batch must be at least 1, got {batch}')
        x, y = self.shards[client]
        idx = rng.integers(y.size, size=batch)
        return self.loss_and_gradient(w, x[idx], y[idx])[1]

    def accuracy(self, w: Weights) -> Optional[float]:
        if self.test_set is None:
            return None
        predictions = np.argmax(self.logits(w, self.test_set.features), axis=1)
        return float(np.mean(predictions == self.test_set.labels))

    def _softmax_residual(self, z: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
        lse = _logsumexp(z)
        loss = float(np.mean(lse - z[np.arange(y.size), y]))
        probs = np.exp(z - lse[:, None])
        probs[np.arange(y.size), y] -= 1.0
        return loss, probs / y.size


class LogRegProblem(ClassificationProblem):
    kind = ProblemKind.LOGREG

    def __init__(self, dataset: Dataset, partition: Partition, l2: float = 0.0, test_set: Optional[Dataset] = None):
        super().__init__(dataset, partition, l2, test_set)
        self.dim = self.num_classes * self.input_dim + self.num_classes

    def unpack(self, w: Weights) -> Tuple[np.ndarray, np.ndarray]:
        split = self.num_classes * self.input_dim
        return w[:split].reshape(self.num_classes, self.input_dim), w[split:]

    def initial_weights(self) -> Weights:
        return np.zeros(self.dim)

    def logits(self, w: Weights, x: np.ndarray) -> np.ndarray:
        weights, bias = self.unpack(w)
        return x @ weights.T + bias

    def loss_and_gradient(self, w: Weights, x: np.ndarray, y: np.ndarray) -> Tuple[float, Weights]:
        loss, residual = self._softmax_residual(self.logits(w, x), y)
        grad = np.concatenate([(residual.T @ x).ravel(), residual.sum(axis=0)])
        if self.l2:
            loss += 0.5 * self.l2 * float(w @ w)
            grad += self.l2 * w
        return loss, grad

    def flops_per_iter(self, batch: int) -> float:
        return 6.0 * batch * self.input_dim * self.num_classes


class MlpProblem(ClassificationProblem):
    kind = ProblemKind.MLP

    def __init__(self, dataset: Dataset, partition: Partition, hidden: int, seed: int,
                 l2: float = 0.0, test_set: Optional[Dataset] = None):
        if hidden < 1:
            raise ProblemError(f'hidden layer needs at least one unit, got {hidden}')
        super().__init__(dataset, partition, l2, test_set)
        self.hidden = hidden
        self.seed = seed
        d, h, c = self.input_dim, hidden, self.num_classes
        self._sizes = [h * d, h, c * h, c]
        self.dim = sum(self._sizes)

    def unpack(self, w: Weights) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        d, h, c = self.input_dim, self.hidden, self.num_classes
        w1, b1, w2, b2 = np.split(w, np.cumsum(self._sizes)[:-1])
        return w1.reshape(h, d), b1, w2.reshape(c, h), b2

    def initial_weights(self) -> Weights:
        rng = derive_stream(self.seed, 'problem/mlp/init')
        first = 1.0 / np.sqrt(self.input_dim)
        second = 1.0 / np.sqrt(self.hidden)
        parts = [
            rng.uniform(-first, first, self._sizes[0]),
            rng.uniform(-first, first, self._sizes[1]),
            rng.uniform(-second, second, self._sizes[2]),
            rng.uniform(-second, second, self._sizes[3]),
        ]
        return np.concatenate(parts)

    def hidden_preactivations(self, w: Weights, x: np.ndarray) -> np.ndarray:
        w1, b1, _, _ = self.unpack(w)
        return x @ w1.T + b1

    def logits(self, w: Weights, x: np.ndarray) -> np.ndarray:
        _, _, w2, b2 = self.unpack(w)
        return np.tanh(self.hidden_preactivations(w, x)) @ w2.T + b2

    def loss_and_gradient(self, w: Weights, x: np.ndarray, y: np.ndarray) -> Tuple[float, Weights]:
        w1, b1, w2, b2 = self.unpack(w)
        hidden = np.tanh(x @ w1.T + b1)
        loss, d_out = self._softmax_residual(hidden @ w2.T + b2, y)
        d_hidden = (d_out @ w2) * (1.0 - hidden ** 2)
        grad = np.concatenate([
            (d_hidden.T @ x).ravel(),
            d_hidden.sum(axis=0),
            (d_out.T @ hidden).ravel(),
            d_out.sum(axis=0),
        ])
        if self.l2:
            loss += 0.5 * self.l2 * float(w @ w)
            grad += self.l2 * w
        return loss, grad

    def flops_per_iter(self, batch: int) -> float:
        return 6.0 * batch * (self.input_dim * self.hidden + self.hidden * self.num_classes)


def _logsumexp(z: np.ndarray) -> np.ndarray:
    top = z.max(axis=1)
    return top + np.log(np.exp(z - top[:, None]).sum(axis=1))


def _unit_vector(rng: RngStream, d: int) -> np.ndarray:
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def _balanced_directions(num_clients: int, d: int, rng: RngStream) -> np.ndarray:
    """Unit vectors u_i with sum_i u_i = 0: antipodal pairs plus one 120-degree triple for odd N."""
    directions = np.zeros((num_clients, d))
    row = 0
    if num_clients % 2 == 1:
        a = _unit_vector(rng, d)
        b = rng.normal(size=d)
        b -= (b @ a) * a
        b /= np.linalg.norm(b)
        half = np.sqrt(3.0) / 2.0
        directions[0] = a
        directions[1] = -0.5 * a + half * b
        directions[2] = -directions[0] - directions[1]
        row = 3
    while row < num_clients:
        u = _unit_vector(rng, d)
        directions[row] = u
        directions[row + 1] = -u
        row += 2
    return directions[rng.permutation(num_clients)]


def make_quadratic(num_clients: int, dim: int, hetero_nu: float, sigma: float, seed: int,
                   gap: float = 1.0) -> QuadraticProblem:
    if num_clients < 1 or dim < 1:
        raise ProblemError(f'quadratic needs N >= 1 and d >= 1, got N={num_clients}, d={dim}')
    if hetero_nu < 0 or sigma < 0 or gap < 0:
        raise ProblemError('nu, sigma and gap must be nonnegative')
    if hetero_nu > 0:
        if num_clients == 1:
            raise ProblemError('a single client cannot have zero-sum heterogeneity directions with nu > 0')
        if dim == 1 and num_clients % 2 == 1:
            raise ProblemError('odd N with d = 1 admits no zero-sum unit directions; use d >= 2')

    center = np.full(dim, np.sqrt(2.0 * gap / dim))
    if hetero_nu > 0:
        rng = derive_stream(seed, 'problem/quadratic/directions')
        centers = center + hetero_nu * _balanced_directions(num_clients, dim, rng)
    else:
        centers = np.tile(center, (num_clients, 1))
    problem = QuadraticProblem(centers, sigma, hetero_nu)
    logger.debug(f'Quadratic problem N={num_clients} d={dim} nu={hetero_nu} sigma={sigma} gap={gap}')
    return problem


def make_logreg(dataset: Dataset, partition: Partition, l2: float = 0.0,
                test_set: Optional[Dataset] = None) -> LogRegProblem:
    return LogRegProblem(dataset, partition, l2, test_set)


def make_mlp(dataset: Dataset, partition: Partition, hidden: int, seed: int, l2: float = 0.0,
             test_set: Optional[Dataset] = None) -> MlpProblem:
    return MlpProblem(dataset, partition, hidden, seed, l2, test_set)


def stochastic_gradient(problem: Problem, client: int, w: Weights, batch: int, rng: RngStream) -> Weights:
    return problem.stochastic_gradient(client, w, batch, rng)


def build_problem(spec: ProblemSpec, seed: int) -> Problem:
    kind = ProblemKind(spec.kind)
    if kind is ProblemKind.QUADRATIC:
        return make_quadratic(spec.N, spec.dim, spec.nu, spec.sigma, seed, gap=spec.gap)

    if spec.dataset == 'synthetic':
        train, test = DatasetRepository.synthetic_classification(
            spec.samples, spec.features, spec.classes, seed, test_samples=spec.test_samples)
    elif spec.dataset == 'fashionmnist':
        train = DatasetRepository.load_fashionmnist('train')
        try:
            test = DatasetRepository.load_fashionmnist('test')
        except (DatasetError, FileNotFoundError) as e:
            logger.warning(f'FashionMNIST test split unavailable, accuracy disabled: {e}')
            test = None
    else:
        raise ProblemError(f'unknown dataset {spec.dataset!r}')

    shards = partition(train, spec.partition, spec.N, seed)
    if kind is ProblemKind.LOGREG:
        return make_logreg(train, shards, l2=spec.l2, test_set=test)
    return make_mlp(train, shards, spec.hidden, seed, l2=spec.l2, test_set=test)
