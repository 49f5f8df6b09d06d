"""Synthetic sequence-classification task with a fixed-seed generator.

Each class owns a latent prototype; a sequence is that prototype pushed
through a shared random projection and corrupted with per-step Gaussian
noise, so class evidence accumulates over time and the informative input
directions span a low-dimensional subspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .rnn import Batch


@dataclass(frozen=True)
class TaskConfig:
    classes: int = 8
    n_in: int = 16
    n_latent: int = 4
    seq_len_min: int = 10
    seq_len_max: int = 30
    train_size: int = 256
    val_size: int = 128
    noise: float = 1.0
    data_seed: int = 1234

    def __post_init__(self):
        if not 2 <= self.classes:
            raise InvalidInputError("need at least 2 classes")
        if self.seq_len_min < 1 or self.seq_len_max < self.seq_len_min:
            raise InvalidInputError("bad sequence length range")
        if self.n_latent < 1 or self.n_in < 1:
            raise InvalidInputError("bad input dimensions")
        if self.train_size < 1 or self.val_size < 1:
            raise InvalidInputError("bad dataset sizes")


@dataclass
class Dataset:
    train: Batch
    val: Batch
    config: TaskConfig


def make_dataset(cfg: TaskConfig) -> Dataset:
    """Deterministically generate train/val splits from cfg.data_seed."""
    rng = np.random.default_rng(cfg.data_seed)
    projection = rng.standard_normal((cfg.n_in, cfg.n_latent)) / np.sqrt(cfg.n_latent)
    prototypes = rng.standard_normal((cfg.classes, cfg.n_latent))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
    train = _sample_batch(rng, cfg, projection, prototypes, cfg.train_size)
    val = _sample_batch(rng, cfg, projection, prototypes, cfg.val_size)
    return Dataset(train=train, val=val, config=cfg)


def _sample_batch(rng, cfg, projection, prototypes, count) -> Batch:
    t_max = cfg.seq_len_max
    x = np.zeros((count, t_max, cfg.n_in))
    labels = rng.integers(0, cfg.classes, size=count)
    lengths = rng.integers(cfg.seq_len_min, cfg.seq_len_max + 1, size=count)
    means = prototypes[labels] @ projection.T
    for i in range(count):
        t = lengths[i]
        x[i, :t] = means[i] + cfg.noise * rng.standard_normal((t, cfg.n_in))
    return Batch(x=x, lengths=lengths, labels=labels)
