"""Factored layers, GRU weight grouping, and truncated-SVD warmstarts."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .linalg import as_matrix, rank_for_variance, split_factors, svd

RECURRENT = "recurrent"
NONRECURRENT = "nonrecurrent"


class SharingScheme(enum.Enum):
    """How the six GRU weight matrices are grouped before factorization."""

    COMPLETELY_JOINT = "completely_joint"
    PARTIALLY_JOINT = "partially_joint"
    COMPLETELY_SPLIT = "completely_split"


@dataclass
class FactoredLayer:
    """A weight matrix stored as the product W = U V.

    ``kind`` tags the layer as recurrent or nonrecurrent so training can
    apply separate regularization strengths.
    """

    u: np.ndarray  # m x r
    v: np.ndarray  # r x n
    kind: str = NONRECURRENT

    def __post_init__(self):
        self.u = as_matrix(self.u)
        self.v = as_matrix(self.v)
        if self.u.shape[1] != self.v.shape[0]:
            raise InvalidInputError(
                f"inner dimensions disagree: {self.u.shape} vs {self.v.shape}"
            )
        m, r = self.u.shape
        n = self.v.shape[1]
        if r > min(m, n):
            raise InvalidInputError(f"rank {r} exceeds min{m, n}")
        if self.kind not in (RECURRENT, NONRECURRENT):
            raise InvalidInputError(f"unknown layer kind {self.kind!r}")

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.u.shape[0], self.v.shape[1])


@dataclass
class GruLayerWeights:
    """The six GRU matrices and three bias vectors of one layer."""

    w_z: np.ndarray
    w_r: np.ndarray
    w_h: np.ndarray
    u_z: np.ndarray
    u_r: np.ndarray
    u_h: np.ndarray
    b_z: np.ndarray = field(default=None)
    b_r: np.ndarray = field(default=None)
    b_h: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h"):
            setattr(self, name, as_matrix(getattr(self, name)))
        n_h = self.w_z.shape[0]
        if not (self.w_z.shape == self.w_r.shape == self.w_h.shape):
            raise InvalidInputError("input weight matrices must share a shape")
        if not (self.u_z.shape == self.u_r.shape == self.u_h.shape == (n_h, n_h)):
            raise InvalidInputError("recurrent weight matrices must be n_h x n_h")
        for name in ("b_z", "b_r", "b_h"):
            b = getattr(self, name)
            b = np.zeros(n_h) if b is None else np.asarray(b, dtype=np.float64)
            if b.shape != (n_h,):
                raise InvalidInputError(f"{name} must have length {n_h}")
            setattr(self, name, b)

    @property
    def n_in(self) -> int:
        return self.w_z.shape[1]

    @property
    def n_h(self) -> int:
        return self.w_z.shape[0]


def group_gru_weights(w: GruLayerWeights, scheme: SharingScheme) -> list[tuple[np.ndarray, str]]:
    """Group the six GRU matrices per the sharing scheme.

    Partially joint stacks the three input matrices (tagged nonrecurrent)
    and the three recurrent matrices (tagged recurrent). Completely joint
    produces a single 3*n_h x (n_in + n_h) matrix acting on [x; h], tagged
    recurrent. Completely split returns the six matrices unchanged.
    """
    w_cat = np.vstack([w.w_z, w.w_r, w.w_h])
    u_cat = np.vstack([w.u_z, w.u_r, w.u_h])
    if scheme is SharingScheme.PARTIALLY_JOINT:
        return [(w_cat, NONRECURRENT), (u_cat, RECURRENT)]
    if scheme is SharingScheme.COMPLETELY_SPLIT:
        return [
            (w.w_z, NONRECURRENT),
            (w.w_r, NONRECURRENT),
            (w.w_h, NONRECURRENT),
            (w.u_z, RECURRENT),
            (w.u_r, RECURRENT),
            (w.u_h, RECURRENT),
        ]
    if scheme is SharingScheme.COMPLETELY_JOINT:
        return [(np.hstack([w_cat, u_cat]), RECURRENT)]
    raise InvalidInputError(f"unknown sharing scheme {scheme!r}")


def warmstart_from_svd(w, threshold: float, kind: str = NONRECURRENT) -> FactoredLayer:
    """Factor ``w`` at the smallest rank explaining ``threshold`` of its variance."""
    mat = as_matrix(w)
    res = svd(mat)
    r = rank_for_variance(res.sigma, threshold)
    u, v = split_factors(res, r)
    return FactoredLayer(u=u, v=v, kind=kind)


def recover(layer: FactoredLayer) -> np.ndarray:
    """Multiply the factors back into a dense matrix."""
    return layer.u @ layer.v


def parameter_count(items) -> int:
    """Total stored reals across factored layers, matrices, and bias vectors."""
    total = 0
    for item in items:
        if isinstance(item, FactoredLayer):
            total += item.u.size + item.v.size
        else:
            total += np.asarray(item).size
    return total
