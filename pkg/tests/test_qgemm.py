import numpy as np
import pytest

from compactrnn.errors import InvalidInputError
from compactrnn.qgemm import (
    BenchRow,
    QuantParams,
    QuantizedMatrix,
    benchmark,
    choose_quant_params,
    dequantize,
    gemm_opt,
    gemm_ref,
    pack_weights,
    quantize,
    unpack,
)


def qmat(rng, m, k, zero_point=None, scale=1.0):
    zp = int(rng.integers(0, 256)) if zero_point is None else zero_point
    return QuantizedMatrix(
        data=rng.integers(0, 256, size=(m, k), dtype=np.uint8),
        params=QuantParams(scale=scale, zero_point=zp),
    )


def scalar_triple_loop(a: QuantizedMatrix, b: QuantizedMatrix) -> np.ndarray:
    """Independent pure-Python oracle for the zero-point GEMM."""
    m, k = a.data.shape
    n = b.data.shape[1]
    a0, b0 = a.params.zero_point, b.params.zero_point
    out = np.zeros((m, n), dtype=np.int64)
    for i in range(m):
        for j in range(n):
            acc = 0
            for kk in range(k):
                acc += (int(a.data[i, kk]) - a0) * (int(b.data[kk, j]) - b0)
            out[i, j] = acc
    return out.astype(np.int32)


class TestQuantParams:
    def test_symmetric_unit_range(self):
        p = choose_quant_params(-1.0, 1.0)
        assert p.scale == pytest.approx(2.0 / 255.0)
        assert p.zero_point == 128  # round-half-to-even of 127.5

    def test_identity_range(self):
        p = choose_quant_params(0.0, 255.0)
        assert p.scale == 1.0
        assert p.zero_point == 0

    def test_mirrored_range(self):
        p = choose_quant_params(-255.0, 0.0)
        assert p.scale == 1.0
        assert p.zero_point == 255

    def test_degenerate_range(self):
        p = choose_quant_params(0.0, 0.0)
        assert p.scale == 1.0
        assert p.zero_point == 0

    def test_range_widened_to_include_zero(self):
        p = choose_quant_params(2.0, 5.0)
        assert p.scale == pytest.approx(5.0 / 255.0)
        assert p.zero_point == 0

    def test_rejects_inverted_range(self):
        with pytest.raises(InvalidInputError):
            choose_quant_params(1.0, -1.0)

    def test_zero_exactly_representable(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            lo, hi = sorted(rng.uniform(-10, 10, size=2))
            p = choose_quant_params(lo, hi)
            q = quantize(np.array([[0.0]]), p)
            assert dequantize(q)[0, 0] == 0.0


class TestQuantizeRoundTrip:
    def test_zero_maps_to_zero_point(self):
        p = QuantParams(scale=0.1, zero_point=77)
        assert quantize(np.zeros((2, 2)), p).data[0, 0] == 77

    def test_saturation(self):
        p = QuantParams(scale=2.0 / 255.0, zero_point=128)
        q = quantize(np.array([[10.0, -10.0]]), p)
        assert q.data[0, 0] == 255
        assert q.data[0, 1] == 0

    def test_derived_point(self):
        p = QuantParams(scale=2.0 / 255.0, zero_point=128)
        q = quantize(np.array([[1.0]]), p)
        assert q.data[0, 0] == 255
        assert dequantize(q)[0, 0] == pytest.approx(127.0 * 2.0 / 255.0)

    def test_ties_to_even(self):
        p = QuantParams(scale=1.0, zero_point=0)
        q = quantize(np.array([[0.5, 1.5, 2.5, 3.5]]), p)
        assert q.data.tolist() == [[0, 2, 2, 4]]

    def test_round_trip_within_half_scale(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            lo, hi = sorted(rng.uniform(-5, 5, size=2))
            p = choose_quant_params(lo, hi)
            x = rng.uniform(min(lo, 0), max(hi, 0), size=(4, 5))
            err = np.abs(dequantize(quantize(x, p)) - x)
            assert err.max() <= p.scale / 2 + 1e-12


class TestGemmRef:
    def test_one_by_one(self):
        a = QuantizedMatrix(np.array([[2]], dtype=np.uint8), QuantParams(1.0, 1))
        b = QuantizedMatrix(np.array([[5]], dtype=np.uint8), QuantParams(1.0, 3))
        assert gemm_ref(a, b)[0, 0] == 2

    def test_all_entries_at_zero_point(self):
        a = QuantizedMatrix(np.full((3, 4), 9, dtype=np.uint8), QuantParams(1.0, 9))
        b = QuantizedMatrix(np.full((4, 2), 7, dtype=np.uint8), QuantParams(1.0, 7))
        assert np.array_equal(gemm_ref(a, b), np.zeros((3, 2), dtype=np.int32))

    def test_plain_integer_gemm(self):
        a = QuantizedMatrix(np.array([[1, 2], [3, 4]], dtype=np.uint8), QuantParams(1.0, 0))
        b = QuantizedMatrix(np.array([[5, 6], [7, 8]], dtype=np.uint8), QuantParams(1.0, 0))
        assert gemm_ref(a, b).tolist() == [[19, 22], [43, 50]]

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(2)
        with pytest.raises(InvalidInputError):
            gemm_ref(qmat(rng, 3, 4), qmat(rng, 5, 2))

    def test_result_dtype_is_int32(self):
        rng = np.random.default_rng(3)
        out = gemm_ref(qmat(rng, 3, 4), qmat(rng, 4, 2))
        assert out.dtype == np.int32

    @pytest.mark.parametrize("shape", [(1, 1, 1), (3, 5, 2), (7, 2, 4), (4, 9, 3)])
    def test_matches_scalar_oracle(self, shape):
        m, k, n = shape
        rng = np.random.default_rng(m * 100 + k * 10 + n)
        a, b = qmat(rng, m, k), qmat(rng, k, n)
        assert np.array_equal(gemm_ref(a, b), scalar_triple_loop(a, b))

    def test_accumulator_stays_exact_at_safe_bound(self):
        # worst case |acc| = k * 255^2 just inside int32: all-255 against zp 0
        k = 33025
        a = QuantizedMatrix(np.full((1, k), 255, dtype=np.uint8), QuantParams(1.0, 0))
        b = QuantizedMatrix(np.full((k, 1), 255, dtype=np.uint8), QuantParams(1.0, 0))
        assert gemm_ref(a, b)[0, 0] == k * 255 * 255 == 2147450625
        # and the most negative corner: a at 255 with b at 0 against zp 255
        b_neg = QuantizedMatrix(np.zeros((k, 1), dtype=np.uint8), QuantParams(1.0, 255))
        assert gemm_ref(a, b_neg)[0, 0] == -k * 255 * 255


class TestPacking:
    @pytest.mark.parametrize("shape", [(1, 1), (5, 3), (8, 64), (17, 129), (33, 7)])
    def test_pack_unpack_bijection(self, shape):
        rng = np.random.default_rng(sum(shape))
        a = qmat(rng, *shape)
        packed = pack_weights(a)
        back = unpack(packed)
        assert np.array_equal(back.data, a.data)
        assert back.params == a.params

    def test_custom_panel_and_block(self):
        rng = np.random.default_rng(4)
        a = qmat(rng, 13, 40)
        packed = pack_weights(a, panel_height=5, k_block=16)
        assert packed.panels.shape == (3, 3, 5, 16)
        assert np.array_equal(unpack(packed).data, a.data)

    def test_panel_count(self):
        rng = np.random.default_rng(5)
        packed = pack_weights(qmat(rng, 6144, 320))
        assert packed.panels.shape[0] == 6144 // 8

    def test_single_element(self):
        rng = np.random.default_rng(6)
        packed = pack_weights(qmat(rng, 1, 1))
        assert packed.panels.shape == (1, 1, 8, 64)
        assert np.array_equal(unpack(packed).data, qmat(np.random.default_rng(6), 1, 1).data)

    def test_rowsum_matches_rows(self):
        rng = np.random.default_rng(7)
        a = qmat(rng, 11, 23)
        packed = pack_weights(a)
        expect = a.data.sum(axis=1, dtype=np.int32)
        assert np.array_equal(packed.rowsum[:11], expect)
        assert np.all(packed.rowsum[11:] == 0)


class TestGemmOpt:
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_matches_ref_small(self, n):
        rng = np.random.default_rng(10 + n)
        for _ in range(25):
            m = int(rng.integers(1, 40))
            k = int(rng.integers(1, 90))
            a, b = qmat(rng, m, k), qmat(rng, k, n)
            packed = pack_weights(a)
            assert np.array_equal(gemm_opt(packed, b), gemm_ref(a, b))

    @pytest.mark.parametrize("a0", [0, 255])
    @pytest.mark.parametrize("b0", [0, 255])
    def test_zero_point_corners(self, a0, b0):
        rng = np.random.default_rng(20 + a0 + b0)
        for n in (1, 2, 3, 4):
            a, b = qmat(rng, 9, 70, zero_point=a0), qmat(rng, 70, n, zero_point=b0)
            assert np.array_equal(gemm_opt(pack_weights(a), b), gemm_ref(a, b))

    def test_block_boundaries(self):
        rng = np.random.default_rng(30)
        for k in (63, 64, 65, 128, 129):
            for m in (7, 8, 9):
                a, b = qmat(rng, m, k), qmat(rng, k, 2)
                assert np.array_equal(gemm_opt(pack_weights(a), b), gemm_ref(a, b))

    def test_nonstandard_panel_geometry(self):
        rng = np.random.default_rng(31)
        a, b = qmat(rng, 23, 50), qmat(rng, 50, 3)
        packed = pack_weights(a, panel_height=5, k_block=16)
        assert np.array_equal(gemm_opt(packed, b), gemm_ref(a, b))

    def test_fallback_beyond_batch_four(self):
        rng = np.random.default_rng(32)
        a, b = qmat(rng, 12, 33), qmat(rng, 33, 7)
        assert np.array_equal(gemm_opt(pack_weights(a), b), gemm_ref(a, b))

    def test_packed_weights_reused_across_calls(self):
        rng = np.random.default_rng(33)
        a = qmat(rng, 16, 48)
        packed = pack_weights(a)
        for _ in range(3):
            b = qmat(rng, 48, 1)
            assert np.array_equal(gemm_opt(packed, b), gemm_ref(a, b))

    def test_figure_shape(self):
        rng = np.random.default_rng(34)
        a, b = qmat(rng, 6144, 320), qmat(rng, 320, 1)
        assert np.array_equal(gemm_opt(pack_weights(a), b), gemm_ref(a, b))

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(35)
        packed = pack_weights(qmat(rng, 4, 5))
        with pytest.raises(InvalidInputError):
            gemm_opt(packed, qmat(rng, 6, 1))

    def test_adversarial_saturated_inputs(self):
        k = 33025  # largest k with guaranteed int32 safety
        a = QuantizedMatrix(np.full((5, k), 255, dtype=np.uint8), QuantParams(1.0, 0))
        packed = pack_weights(a)
        for fill, zp in ((255, 0), (0, 255)):
            b = QuantizedMatrix(np.full((k, 2), fill, dtype=np.uint8), QuantParams(1.0, zp))
            assert np.array_equal(gemm_opt(packed, b), gemm_ref(a, b))


class TestBenchmark:
    def test_row_layout(self):
        rows = benchmark(m=64, k=32, batches=(1, 2), reps=3, seed=1)
        assert len(rows) == 4
        kernels = [(r.kernel, r.batch) for r in rows]
        assert kernels == [("ref", 1), ("opt", 1), ("ref", 2), ("opt", 2)]
        for r in rows:
            assert isinstance(r, BenchRow)
            assert r.median_seconds > 0
            assert np.isfinite(r.gops) and r.gops > 0
            assert r.reps == 3

    def test_op_count_convention(self):
        rows = benchmark(m=64, k=32, batches=(1,), reps=2, seed=2)
        ops = 2 * 64 * 32
        for r in rows:
            assert r.gops == pytest.approx(ops / r.median_seconds / 1e9)

    def test_fallback_labeled(self):
        rows = benchmark(m=32, k=16, batches=(5,), reps=2, seed=3)
        assert {r.kernel for r in rows} == {"ref", "opt_fallback"}

    def test_rejects_bad_sizes(self):
        with pytest.raises(InvalidInputError):
            benchmark(m=0, k=1, batches=(1,), reps=1)
        with pytest.raises(InvalidInputError):
            benchmark(m=1, k=1, batches=(0,), reps=1)
