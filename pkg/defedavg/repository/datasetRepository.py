import gzip
import logging
import os
import struct
from typing import Optional, Tuple

import numpy as np

from defedavg.config import Config
from defedavg.errors import DatasetError
from defedavg.models.data import Dataset
from defedavg.services.numerics_service import derive_stream

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

FASHIONMNIST_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}


def data_dir() -> str:
    return os.getenv('DEFEDAVG_DATA_DIR', Config.DATA_DIR)


class DatasetRepository:

    @staticmethod
    def read_idx(path: str) -> np.ndarray:
        """Parse an IDX file.

        Images (magic 0x00000803) come back as an (n, rows*cols) float array
        scaled to [0, 1]; labels (magic 0x00000801) as an int64 vector.
        """
        if not os.path.exists(path):
            raise FileNotFoundError(f'IDX file not found: {path}')
        opener = gzip.open if path.endswith('.gz') else open
        with opener(path, 'rb') as f:
            raw = f.read()
        return DatasetRepository.parse_idx_bytes(raw, source=path)

    @staticmethod
    def parse_idx_bytes(raw: bytes, source: str = '<bytes>') -> np.ndarray:
        if len(raw) < 4:
            raise DatasetError(f'{source}: truncated IDX header')
        magic = struct.unpack('>I', raw[:4])[0]
        if magic == IDX_IMAGES_MAGIC:
            ndim = 3
        elif magic == IDX_LABELS_MAGIC:
            ndim = 1
        else:
            raise DatasetError(f'{source}: unsupported IDX magic 0x{magic:08x}')

        header_len = 4 + 4 * ndim
        if len(raw) < header_len:
            raise DatasetError(f'{source}: truncated IDX dimension block')
        dims = struct.unpack('>' + 'I' * ndim, raw[4:header_len])
        expected = int(np.prod(dims))
        payload = raw[header_len:]
        if len(payload) < expected:
            raise DatasetError(f'{source}: truncated IDX payload, expected {expected} bytes, found {len(payload)}')
        if len(payload) > expected:
            logger.warning(f'{source}: ignoring {len(payload) - expected} trailing bytes')

        data = np.frombuffer(payload[:expected], dtype=np.uint8)
        if ndim == 3:
            return data.reshape(dims[0], dims[1] * dims[2]).astype(np.float64) / 255.0
        return data.astype(np.int64)

    @staticmethod
    def pair(images: np.ndarray, labels: np.ndarray, num_classes: Optional[int] = None) -> Dataset:
        if images.ndim != 2 or labels.ndim != 1:
            raise DatasetError('pairing needs an image matrix and a label vector')
        if images.shape[0] != labels.shape[0]:
            raise DatasetError(f'image count {images.shape[0]} does not match label count {labels.shape[0]}')
        return Dataset(images, labels, num_classes)

    @staticmethod
    def load_idx_pair(images_path: str, labels_path: str, num_classes: Optional[int] = None) -> Dataset:
        images = DatasetRepository.read_idx(images_path)
        labels = DatasetRepository.read_idx(labels_path)
        return DatasetRepository.pair(images, labels, num_classes)

    @staticmethod
    def load_fashionmnist(split: str = 'train', directory: Optional[str] = None) -> Dataset:
        directory = directory or data_dir()
        images_name, labels_name = FASHIONMNIST_FILES[split]
        paths = []
        for name in (images_name, labels_name):
            plain = os.path.join(directory, name)
            path = plain if os.path.exists(plain) else plain + '.gz'
            if not os.path.exists(path):
                raise DatasetError(f'FashionMNIST file {name} not found in {directory} (set DEFEDAVG_DATA_DIR)')
            paths.append(path)
        dataset = DatasetRepository.load_idx_pair(paths[0], paths[1], num_classes=10)
        logger.info(f'Loaded FashionMNIST {split}: {dataset.size} samples from {directory}')
        return dataset

    @staticmethod
    def synthetic_classification(samples: int, features: int, classes: int, seed: int,
                                 test_samples: int = 0, planted_scale: float = 2.0) -> Tuple[Dataset, Optional[Dataset]]:
        """Gaussian features with labels drawn from a planted softmax model."""
        if samples < 1 or features < 1 or classes < 2:
            raise DatasetError(f'invalid synthetic dataset shape: samples={samples}, features={features}, classes={classes}')
        rng = derive_stream(seed, 'dataset/synthetic')
        total = samples + test_samples
        x = rng.normal(size=(total, features))
        planted = rng.normal(size=(classes, features)) * (planted_scale / np.sqrt(features))
        logits = x @ planted.T
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        u = rng.uniform(size=(total, 1))
        labels = np.minimum((probs.cumsum(axis=1) < u).sum(axis=1), classes - 1).astype(np.int64)

        train = Dataset(x[:samples], labels[:samples], classes)
        test = Dataset(x[samples:], labels[samples:], classes) if test_samples > 0 else None
        return train, test
