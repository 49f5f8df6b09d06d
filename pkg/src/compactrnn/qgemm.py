"""Quantized uint8 GEMM: affine quantization, a reference kernel, and a
packed kernel specialized for batch sizes 1 to 4.

The wire semantics are the standard zero-point scheme: entries are uint8,
the product accumulates sum_k (a_ik - a0)(b_kj - b0) in signed 32-bit.
``gemm_ref`` is the definitional implementation (exact int32 arithmetic,
including wraparound, via numpy); ``gemm_opt`` must match it bit for bit
and earns its speed from one-time panel packing, precomputed row sums,
and register-tiled micro-kernels. Guaranteed overflow-free accumulation
requires k * 255^2 < 2^31, i.e. k <= 33025.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from . import _kernels

DEFAULT_PANEL_HEIGHT = 8
DEFAULT_K_BLOCK = 64


@dataclass(frozen=True)
class QuantParams:
    """Affine uint8 encoding: q = round(x / scale) + zero_point."""

    scale: float
    zero_point: int

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise InvalidInputError("scale must be positive and finite")
        if not 0 <= self.zero_point <= 255:
            raise InvalidInputError("zero_point must lie in [0, 255]")


@dataclass(frozen=True)
class QuantizedMatrix:
    data: np.ndarray  # uint8, 2-D
    params: QuantParams

    def __post_init__(self):
        d = self.data
        if d.ndim != 2 or d.dtype != np.uint8:
            raise InvalidInputError("quantized data must be a 2-D uint8 array")
        if d.shape[0] == 0 or d.shape[1] == 0:
            raise InvalidInputError("quantized matrix has a zero dimension")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def choose_quant_params(lo: float, hi: float) -> QuantParams:
    """Quantization parameters for the value range [lo, hi].

    The range is widened to contain 0 so that the real value 0 is exactly
    representable. A fully degenerate range maps to scale 1, zero point 0.
    """
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise InvalidInputError("range bounds must be finite")
    if lo > hi:
        raise InvalidInputError(f"invalid range [{lo}, {hi}]")
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if lo == hi:
        return QuantParams(scale=1.0, zero_point=0)
    scale = (hi - lo) / 255.0
    zero_point = int(np.clip(np.round(-lo / scale), 0, 255))
    return QuantParams(scale=scale, zero_point=zero_point)


def quantize(m, p: QuantParams) -> QuantizedMatrix:
    """Saturating uint8 quantization with ties-to-even rounding."""
    x = np.asarray(m, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError("expected a 2-D matrix")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("matrix entries must be finite")
    q = np.clip(np.round(x / p.scale) + p.zero_point, 0, 255).astype(np.uint8)
    return QuantizedMatrix(data=q, params=p)


def dequantize(q: QuantizedMatrix) -> np.ndarray:
    return q.params.scale * (q.data.astype(np.float64) - q.params.zero_point)


def gemm_ref(a: QuantizedMatrix, b: QuantizedMatrix) -> np.ndarray:
    """Reference zero-point GEMM: exact int32 evaluation of the triple loop.

    Returns the (m, n) int32 accumulator matrix sum_k (a-a0)(b-b0).
    """
    if a.cols != b.rows:
        raise InvalidInputError(f"inner dimensions disagree: {a.cols} vs {b.rows}")
    ai = a.data.astype(np.int32) - np.int32(a.params.zero_point)
    bi = b.data.astype(np.int32) - np.int32(b.params.zero_point)
    return ai @ bi


@dataclass(frozen=True)
class PackedWeights:
    """Panel-packed weights plus everything reusable across gemm_opt calls."""

    panels: np.ndarray   # (npanels, nblocks, panel_height, k_block) uint8
    rowsum: np.ndarray   # (npanels * panel_height,) int32, zero padded
    rows: int
    cols: int
    panel_height: int
    k_block: int
    params: QuantParams


def pack_weights(a: QuantizedMatrix, panel_height: int = DEFAULT_PANEL_HEIGHT,
                 k_block: int = DEFAULT_K_BLOCK) -> PackedWeights:
    """Reorganize weights into cache-friendly zero-padded panels.

    Also precomputes per-row sums, which turn the zero-point corrections
    into O(m + n) work outside the hot loop.
    """
    if panel_height < 1 or k_block < 1:
        raise InvalidInputError("panel_height and k_block must be positive")
    m, k = a.data.shape
    npan = -(-m // panel_height)
    nblk = -(-k // k_block)
    buf = np.zeros((npan * panel_height, nblk * k_block), dtype=np.uint8)
    buf[:m, :k] = a.data
    panels = np.ascontiguousarray(
        buf.reshape(npan, panel_height, nblk, k_block).transpose(0, 2, 1, 3))
    rowsum = buf.sum(axis=1, dtype=np.int32)
    return PackedWeights(panels=panels, rowsum=rowsum, rows=m, cols=k,
                         panel_height=panel_height, k_block=k_block, params=a.params)


def unpack(packed: PackedWeights) -> QuantizedMatrix:
    """Invert pack_weights, recovering the original bytes."""
    npan, nblk, ph, kb = packed.panels.shape
    buf = packed.panels.transpose(0, 2, 1, 3).reshape(npan * ph, nblk * kb)
    return QuantizedMatrix(data=np.ascontiguousarray(buf[:packed.rows, :packed.cols]),
                           params=packed.params)


def gemm_opt(packed: PackedWeights, b: QuantizedMatrix) -> np.ndarray:
    """Packed GEMM, bit-identical to gemm_ref on the unpacked operands.

    Specialized for n in {1, 2, 3, 4}; larger batches fall back to the
    reference path (still exact).
    """
    if packed.cols != b.rows:
        raise InvalidInputError(f"inner dimensions disagree: {packed.cols} vs {b.rows}")
    n = b.cols
    if n > 4:
        return gemm_ref(unpack(packed), b)
    npan, nblk, ph, kb = packed.panels.shape
    k = packed.cols
    a0 = int(packed.params.zero_point)
    b0 = int(b.params.zero_point)
    bi = b.data.astype(np.int32)
    cols, corrs = [], []
    for j in range(n):
        col = np.zeros(nblk * kb, dtype=np.int32)
        col[:k] = bi[:, j]
        cols.append(col)
        # sum_k (a-a0)(b-b0) = sum_k a*b - b0*rowsum_i - a0*colsum_j + k*a0*b0;
        # the j-dependent part, reduced mod 2^32 to match int32 wraparound
        corrs.append(_wrap32(k * a0 * b0 - a0 * int(col.sum(dtype=np.int64))))
    out = np.empty((npan * ph, n), dtype=np.int32)
    _kernels.KERNELS[n](packed.panels, packed.rowsum, *cols, np.int32(b0), *corrs, out)
    return np.ascontiguousarray(out[:packed.rows])


def _wrap32(value: int) -> np.int32:
    return np.array(value, dtype=np.int64).astype(np.int32)[()]


@dataclass(frozen=True)
class BenchRow:
    kernel: str
    m: int
    k: int
    batch: int
    reps: int
    median_seconds: float
    gops: float


def benchmark(m: int = 6144, k: int = 320, batches=(1, 2, 3, 4), reps: int = 50,
              seed: int = 0, panel_height: int = DEFAULT_PANEL_HEIGHT,
              k_block: int = DEFAULT_K_BLOCK) -> list[BenchRow]:
    """Time both kernels on random matrices; Gop/s counts 2*m*k*batch ops.

    Weights are packed once outside the timed region, matching the
    sequential-inference pattern the packed layout exists for. Runs are
    single-threaded. Batches above 4 exercise the fallback path and are
    labeled distinctly.
    """
    if m < 1 or k < 1 or reps < 1:
        raise InvalidInputError("benchmark sizes must be positive")
    rng = np.random.default_rng(seed)
    a = QuantizedMatrix(data=rng.integers(0, 256, size=(m, k), dtype=np.uint8),
                        params=QuantParams(scale=0.02, zero_point=int(rng.integers(1, 255))))
    packed = pack_weights(a, panel_height=panel_height, k_block=k_block)
    rows = []
    for batch in batches:
        if batch < 1:
            raise InvalidInputError("batch sizes must be positive")
        b = QuantizedMatrix(data=rng.integers(0, 256, size=(k, batch), dtype=np.uint8),
                            params=QuantParams(scale=0.04, zero_point=int(rng.integers(1, 255))))
        expected = gemm_ref(a, b)
        if not np.array_equal(gemm_opt(packed, b), expected):
            raise AssertionError("gemm_opt diverged from gemm_ref during benchmarking")
        ops = 2.0 * m * k * batch
        opt_name = "opt" if batch <= 4 else "opt_fallback"
        for name, fn in (("ref", lambda: gemm_ref(a, b)),
                         (opt_name, lambda: gemm_opt(packed, b))):
            times = []
            fn()  # warm caches and JIT before timing
            for _ in range(reps):
                t0 = time.perf_counter()
                fn()
                times.append(time.perf_counter() - t0)
            med = float(np.median(times))
            rows.append(BenchRow(kernel=name, m=m, k=k, batch=batch, reps=reps,
                                 median_seconds=med, gops=ops / med / 1e9))
    return rows
