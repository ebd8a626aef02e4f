"""Synthetic linear-regression data and the squared loss used throughout."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class SyntheticDataset:
    features: np.ndarray
    labels: np.ndarray
    shards: tuple  # one index array per device

    def __post_init__(self):
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise ConfigError("labels must have one entry per sample")
        seen = np.concatenate(self.shards) if self.shards else np.empty(0, int)
        if seen.size != n or np.unique(seen).size != n:
            raise ConfigError("device shards must partition the samples")
        sizes = {len(s) for s in self.shards}
        if len(sizes) > 1:
            raise ConfigError("device shards must have identical size")

    @property
    def num_devices(self):
        return len(self.shards)

    @property
    def model_dim(self):
        return self.features.shape[1]

    @property
    def shard_size(self):
        return len(self.shards[0])

    def shard(self, k):
        idx = self.shards[k]
        return self.features[idx], self.labels[idx]


def generate_synthetic_dataset(q, total_samples, num_devices, rng, noise_coeff=0.2):
    """Draw ``y = x[1] + 3 x[4] + noise_coeff * z`` with ``x ~ N(0, I_q)``.

    Indices are 0-based here, so entries 1 and 4 are the second and fifth
    coordinates. Samples are shuffled and split evenly across devices.
    """
    if q < 5:
        raise ConfigError(f"model_dim must be >= 5, got {q}")
    if num_devices < 1 or total_samples % num_devices:
        raise ConfigError(
            f"total_samples={total_samples} not divisible by num_devices={num_devices}"
        )
    x = rng.standard_normal((total_samples, q))
    z = rng.standard_normal(total_samples)
    y = x[:, 1] + 3.0 * x[:, 4] + noise_coeff * z
    order = rng.permutation(total_samples)
    shards = tuple(np.sort(s) for s in np.split(order, num_devices))
    return SyntheticDataset(x, y, shards)


def true_weights(q):
    w = np.zeros(q)
    w[1], w[4] = 1.0, 3.0
    return w


def loss(w, x, y, ridge=0.0):
    r = x @ w - y
    return 0.5 * np.mean(r * r) + 0.5 * ridge * (w @ w)


def gradient(w, x, y, ridge=0.0):
    return x.T @ (x @ w - y) / x.shape[0] + ridge * w


def prediction_error(w, x, y):
    r = x @ w - y
    return float(np.mean(r * r))
