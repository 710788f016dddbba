import hashlib
import logging
from typing import Callable, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt

from defedavg.errors import NumericalError

logger = logging.getLogger(__name__)

# Model vectors are plain float64 arrays of shape (d,).
Weights = npt.NDArray[np.float64]

SEED_MASK = (1 << 64) - 1


def _stream_key(root_seed: int, label: str) -> int:
    digest = hashlib.sha256(f'{root_seed}:{label}'.encode('utf-8')).digest()
    return int.from_bytes(digest[:16], byteorder='big')


class RngStream:
    """Random stream addressed by (root_seed, label).

    The label is hashed together with the root seed into a 128-bit Philox key,
    so any component can rebuild the stream it needs from the two values alone.
    """

    def __init__(self, root_seed: int, label: str):
        if not label:
            raise ValueError('stream label must be nonempty')
        self.root_seed = int(root_seed) & SEED_MASK
        self.label = label
        self.generator = np.random.Generator(np.random.Philox(key=_stream_key(self.root_seed, label)))

    def child(self, suffix: str) -> 'RngStream':
        return RngStream(self.root_seed, f'{self.label}/{suffix}')

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def integers(self, high: int, size=None):
        return self.generator.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def __repr__(self) -> str:
        return f'RngStream(root_seed={self.root_seed}, label={self.label!r})'


def derive_stream(root_seed: int, label: str) -> RngStream:
    return RngStream(root_seed, label)


def as_weights(values: Union[Sequence[float], np.ndarray], context: str = 'weights') -> Weights:
    w = np.array(values, dtype=np.float64).reshape(-1)
    if w.size == 0:
        raise NumericalError(f'{context}: empty weight vector')
    ensure_finite(w, context)
    return w


def ensure_finite(w: np.ndarray, context: str = 'weights') -> None:
    if not np.all(np.isfinite(w)):
        bad = int(np.flatnonzero(~np.isfinite(w))[0])
        raise NumericalError(f'{context}: non-finite value at component {bad}')


def finite_difference_gradient(loss_fn: Callable[[Weights], float], w: Weights, h: float = 1e-6) -> Weights:
    if h <= 0:
        raise ValueError(f'finite-difference step must be positive, got {h}')
    w = np.asarray(w, dtype=np.float64)
    grad = np.zeros_like(w)
    probe = w.copy()
    for j in range(w.size):
        original = probe[j]
        probe[j] = original + h
        f_plus = float(loss_fn(probe))
        probe[j] = original - h
        f_minus = float(loss_fn(probe))
        probe[j] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError(f'non-finite loss while probing component {j}')
        grad[j] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(estimate: np.ndarray, reference: np.ndarray, floor: Optional[float] = 1e-12) -> float:
    scale = max(float(np.linalg.norm(reference)), floor)
    return float(np.linalg.norm(np.asarray(estimate) - np.asarray(reference))) / scale
