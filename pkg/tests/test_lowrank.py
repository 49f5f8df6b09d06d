import numpy as np
import pytest

from compactrnn.errors import InvalidInputError
from compactrnn.linalg import svd
from compactrnn.lowrank import (
    NONRECURRENT,
    RECURRENT,
    FactoredLayer,
    GruLayerWeights,
    SharingScheme,
    group_gru_weights,
    parameter_count,
    recover,
    warmstart_from_svd,
)


def make_gru_weights(rng, n_in=8, n_h=16):
    return GruLayerWeights(
        w_z=rng.standard_normal((n_h, n_in)),
        w_r=rng.standard_normal((n_h, n_in)),
        w_h=rng.standard_normal((n_h, n_in)),
        u_z=rng.standard_normal((n_h, n_h)),
        u_r=rng.standard_normal((n_h, n_h)),
        u_h=rng.standard_normal((n_h, n_h)),
        b_z=rng.standard_normal(n_h),
        b_r=rng.standard_normal(n_h),
        b_h=rng.standard_normal(n_h),
    )


class TestFactoredLayer:
    def test_rejects_inner_mismatch(self):
        with pytest.raises(InvalidInputError):
            FactoredLayer(u=np.ones((3, 2)), v=np.ones((3, 4)))

    def test_rejects_excess_rank(self):
        with pytest.raises(InvalidInputError):
            FactoredLayer(u=np.ones((3, 4)), v=np.ones((4, 5)))

    def test_rank_and_shape(self):
        layer = FactoredLayer(u=np.ones((6, 2)), v=np.ones((2, 4)), kind=RECURRENT)
        assert layer.rank == 2
        assert layer.shape == (6, 4)


class TestGrouping:
    def test_partially_joint_shapes(self):
        rng = np.random.default_rng(0)
        groups = group_gru_weights(make_gru_weights(rng), SharingScheme.PARTIALLY_JOINT)
        shapes = {(g.shape, kind) for g, kind in groups}
        assert shapes == {((48, 8), NONRECURRENT), ((48, 16), RECURRENT)}

    def test_completely_split_shapes(self):
        rng = np.random.default_rng(1)
        groups = group_gru_weights(make_gru_weights(rng), SharingScheme.COMPLETELY_SPLIT)
        assert len(groups) == 6
        shapes = [g.shape for g, _ in groups]
        assert shapes == [(16, 8)] * 3 + [(16, 16)] * 3
        kinds = [kind for _, kind in groups]
        assert kinds == [NONRECURRENT] * 3 + [RECURRENT] * 3

    def test_completely_joint_shape(self):
        rng = np.random.default_rng(2)
        groups = group_gru_weights(make_gru_weights(rng), SharingScheme.COMPLETELY_JOINT)
        assert len(groups) == 1
        mat, kind = groups[0]
        assert mat.shape == (48, 24)
        assert kind == RECURRENT

    def test_partially_joint_round_trip(self):
        rng = np.random.default_rng(3)
        w = make_gru_weights(rng)
        (w_cat, _), (u_cat, _) = group_gru_weights(w, SharingScheme.PARTIALLY_JOINT)
        n_h = w.n_h
        assert np.array_equal(w_cat[:n_h], w.w_z)
        assert np.array_equal(w_cat[n_h:2 * n_h], w.w_r)
        assert np.array_equal(w_cat[2 * n_h:], w.w_h)
        assert np.array_equal(u_cat[:n_h], w.u_z)
        assert np.array_equal(u_cat[n_h:2 * n_h], w.u_r)
        assert np.array_equal(u_cat[2 * n_h:], w.u_h)

    def test_completely_joint_blocks(self):
        rng = np.random.default_rng(4)
        w = make_gru_weights(rng)
        ((mat, _),) = [*group_gru_weights(w, SharingScheme.COMPLETELY_JOINT)]
        assert np.array_equal(mat[:, : w.n_in][: w.n_h], w.w_z)
        assert np.array_equal(mat[:, w.n_in:][2 * w.n_h:], w.u_h)


class TestWarmstart:
    def test_diagonal_truncation(self):
        layer = warmstart_from_svd(np.diag([3.0, 4.0]), 0.5)
        assert layer.rank == 1
        prod = recover(layer)
        sig = np.linalg.svd(prod, compute_uv=False)
        assert sig[0] == pytest.approx(4.0, abs=1e-12)
        assert sig[1] == pytest.approx(0.0, abs=1e-12)

    def test_full_threshold_reconstructs(self):
        rng = np.random.default_rng(5)
        w = rng.standard_normal((7, 5))
        layer = warmstart_from_svd(w, 1.0)
        assert np.linalg.norm(recover(layer) - w) <= 1e-9 * max(1.0, np.linalg.norm(w))

    def test_rank_one_input(self):
        rng = np.random.default_rng(6)
        w = np.outer(rng.standard_normal(6), rng.standard_normal(4))
        for threshold in (0.1, 0.5, 1.0):
            assert warmstart_from_svd(w, threshold).rank == 1

    def test_eckart_young_optimality(self):
        # no rank-r matrix can beat the truncated SVD in Frobenius distance
        rng = np.random.default_rng(7)
        for _ in range(10):
            w = rng.standard_normal((6, 5))
            layer = warmstart_from_svd(w, 0.6)
            err = np.linalg.norm(recover(layer) - w)
            r = layer.rank
            for _ in range(10):
                b = rng.standard_normal((6, r)) @ rng.standard_normal((r, 5))
                assert err <= np.linalg.norm(w - b) + 1e-9

    def test_truncated_spectrum_is_leading_spectrum(self):
        rng = np.random.default_rng(8)
        w = rng.standard_normal((9, 6))
        full = svd(w).sigma
        layer = warmstart_from_svd(w, 0.8)
        sig = np.linalg.svd(recover(layer), compute_uv=False)
        assert np.allclose(sig[: layer.rank], full[: layer.rank], atol=1e-9)

    def test_kind_propagates(self):
        layer = warmstart_from_svd(np.eye(3), 1.0, kind=RECURRENT)
        assert layer.kind == RECURRENT


class TestRecover:
    def test_identity(self):
        layer = FactoredLayer(u=np.eye(2), v=np.eye(2))
        assert np.array_equal(recover(layer), np.eye(2))

    def test_outer_product(self):
        layer = FactoredLayer(u=np.array([[1.0], [0.0]]), v=np.array([[1.0, 0.0]]))
        assert np.array_equal(recover(layer), np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_round_trip(self):
        rng = np.random.default_rng(9)
        w = rng.standard_normal((5, 8))
        layer = warmstart_from_svd(w, 1.0)
        assert np.allclose(recover(layer), w, atol=1e-9)


class TestParameterCount:
    def test_factored_layer(self):
        layer = FactoredLayer(u=np.zeros((48, 4)), v=np.zeros((4, 16)))
        assert parameter_count([layer]) == 4 * (48 + 16)

    def test_dense_plus_bias(self):
        assert parameter_count([np.zeros((48, 16)), np.zeros(48)]) == 816

    def test_empty(self):
        assert parameter_count([]) == 0
