"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from compactrnn.data import TaskConfig, make_dataset
from compactrnn.lowrank import SharingScheme
from compactrnn.rnn import Batch, init_network


def numeric_gradients(loss_fn, params: dict, step: float = 1e-5) -> dict:
    """Central finite differences of loss_fn w.r.t. every array in params.

    Perturbs the live parameter arrays in place and restores them.
    """
    out = {}
    for name, arr in params.items():
        grad = np.zeros_like(arr)
        flat, gflat = arr.ravel(), grad.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            plus = loss_fn()
            flat[idx] = orig - step
            minus = loss_fn()
            flat[idx] = orig
            gflat[idx] = (plus - minus) / (2.0 * step)
        out[name] = grad
    return out


def gradient_violation(analytic: dict, numeric: dict,
                       rel: float = 1e-5, absolute: float = 1e-7) -> float:
    """Worst ratio of |analytic - numeric| to the allowed tolerance.

    The allowance per element is max(absolute, rel * max(|a|, |n|)); a
    return value <= 1.0 means every partial derivative is within spec.
    """
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        allowed = np.maximum(absolute, rel * np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float((np.abs(a - n) / allowed).max()))
    return worst


def small_random_batch(rng, n_in: int, classes: int, batch: int = 3, t: int = 5) -> Batch:
    lengths = rng.integers(1, t + 1, size=batch)
    lengths[0] = t  # keep at least one full-length sequence
    x = rng.standard_normal((batch, t, n_in))
    labels = rng.integers(0, classes, size=batch)
    return Batch(x=x, lengths=lengths, labels=labels)


def small_network(rng, factored: bool, scheme=SharingScheme.PARTIALLY_JOINT,
                  n_in: int = 4, hidden=(5,), classes: int = 3):
    net = init_network(rng, n_in, list(hidden), classes, scheme=scheme, factored=factored)
    # nonzero biases exercise every gradient path
    for name, arr in net.parameters().items():
        if name.endswith(".b"):
            arr += rng.uniform(-0.3, 0.3, size=arr.shape)
    return net


def quick_dataset(seed: int = 1234, **overrides):
    cfg = TaskConfig(**({"data_seed": seed} | overrides))
    return make_dataset(cfg)
