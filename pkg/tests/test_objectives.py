"""Objective gradients: analytic blocks, MLP backprop, finite differences."""

from __future__ import annotations

import numpy as np
import pytest

from sparsam.errors import DivergenceError
from sparsam.layered import ActiveSet, LayeredVector
from sparsam.objectives import (
    Batch,
    BlockQuadratic,
    MlpClassifier,
    finite_diff_grad,
    mlp_loss_and_grad,
    quadratic_grad,
)

from conftest import lv


def two_block_quadratic() -> BlockQuadratic:
    return BlockQuadratic([1, 1], scales=[1.0, 10.0])


class TestBatch:
    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            Batch(np.zeros((2, 3)), np.zeros(3, dtype=np.int64))

    def test_negative_id(self):
        with pytest.raises(ValueError):
            Batch(np.zeros((1, 1)), np.zeros(1, dtype=np.int64), id=-1)

    def test_size(self):
        b = Batch(np.zeros((4, 2)), np.zeros(4, dtype=np.int64))
        assert b.size == 4


class TestQuadraticGrad:
    def test_forced_derivative(self):
        obj = two_block_quadratic()
        g = quadratic_grad(obj, lv([2.0], [1.0]), None, ActiveSet.full(2))
        assert g[0][0] == 2.0
        assert g[1][0] == 10.0

    def test_zero_at_center(self):
        obj = two_block_quadratic()
        g = quadratic_grad(obj, lv([0.0], [0.0]), None, ActiveSet.full(2))
        assert np.array_equal(g.to_flat(), [0.0, 0.0])

    def test_masking_leaves_block_absent(self):
        obj = two_block_quadratic()
        g = quadratic_grad(obj, lv([2.0], [1.0]), None, ActiveSet.of(1))
        assert g[0][0] == 0.0
        assert g[1][0] == 10.0

    def test_shape_mismatch(self):
        obj = two_block_quadratic()
        with pytest.raises(ValueError):
            quadratic_grad(obj, lv([2.0, 3.0], [1.0]), None, ActiveSet.full(2))

    def test_noise_keyed_by_batch_id(self):
        obj = BlockQuadratic([3], noise_sigma=0.5, noise_seed=9)
        x = lv([1.0, 2.0, 3.0])
        b0 = Batch(np.zeros((1, 1)), np.zeros(1, dtype=np.int64), id=0)
        b0_again = Batch(np.ones((1, 1)), np.zeros(1, dtype=np.int64), id=0)
        b1 = Batch(np.zeros((1, 1)), np.zeros(1, dtype=np.int64), id=1)
        g0 = quadratic_grad(obj, x, b0, ActiveSet.full(1))
        g0b = quadratic_grad(obj, x, b0_again, ActiveSet.full(1))
        g1 = quadratic_grad(obj, x, b1, ActiveSet.full(1))
        assert np.array_equal(g0[0], g0b[0])
        assert not np.array_equal(g0[0], g1[0])

    def test_noise_mean_gradient_is_population_gradient(self):
        obj = BlockQuadratic([2], noise_sigma=1.0, noise_seed=3)
        x = lv([0.5, -0.5])
        clean = quadratic_grad(obj, x, None, ActiveSet.full(1))
        draws = [
            quadratic_grad(
                obj, x, Batch(np.zeros((1, 1)), np.zeros(1, dtype=np.int64), id=i),
                ActiveSet.full(1),
            )[0]
            for i in range(4000)
        ]
        mean = np.mean(draws, axis=0)
        assert np.allclose(mean, clean[0], atol=0.08)


class TestMlpGrad:
    def test_symmetric_logits_softmax_gradient(self):
        # Zero weights give logits (0, 0); softmax (0.5, 0.5) against
        # class 0 pushes (-0.5, +0.5) through to weights and bias.
        obj = MlpClassifier([1, 2], activation="tanh")
        x = LayeredVector.zeros(obj.layer_dims)
        batch = Batch(np.array([[1.0]]), np.array([0], dtype=np.int64))
        loss, g = mlp_loss_and_grad(obj, x, batch, ActiveSet.full(obj.n_layers))
        assert loss == pytest.approx(np.log(2.0), rel=1e-12)
        assert np.allclose(g[0], [-0.5, 0.5], atol=1e-12)  # 1x2 weight
        assert np.allclose(g[1], [-0.5, 0.5], atol=1e-12)  # bias

    def test_masked_blocks_bit_identical_to_full(self):
        obj = MlpClassifier([2, 16, 2], activation="tanh")
        x = obj.init_params(1)
        rng = np.random.default_rng(5)
        batch = Batch(rng.standard_normal((8, 2)), rng.integers(0, 2, 8))
        full = obj.grad(x, batch, ActiveSet.full(obj.n_layers))
        active = ActiveSet.of(1, 3)
        part = obj.grad(x, batch, active)
        for l in range(obj.n_layers):
            if l in active:
                assert np.array_equal(part[l], full[l])
            else:
                assert np.array_equal(part[l], np.zeros(obj.layer_dims[l]))

    def test_deterministic(self):
        obj = MlpClassifier([2, 8, 2], activation="relu")
        x = obj.init_params(2)
        rng = np.random.default_rng(6)
        batch = Batch(rng.standard_normal((4, 2)), rng.integers(0, 2, 4))
        l1, g1 = obj.loss_and_grad(x, batch, ActiveSet.full(obj.n_layers))
        l2, g2 = obj.loss_and_grad(x, batch, ActiveSet.full(obj.n_layers))
        assert l1 == l2
        for a, b in zip(g1, g2):
            assert np.array_equal(a, b)

    def test_fused_bias_mode_layer_count(self):
        sep = MlpClassifier([2, 4, 2], activation="tanh", bias_mode="separate")
        fused = MlpClassifier([2, 4, 2], activation="tanh", bias_mode="fused")
        assert sep.n_layers == 4
        assert fused.n_layers == 2
        assert sep.dim == fused.dim == (2 * 4 + 4) + (4 * 2 + 2)

    def test_output_width_must_match_classes(self):
        obj = MlpClassifier([2, 4, 3], activation="tanh")
        assert obj.n_classes == 3
        batch = Batch(np.zeros((1, 2)), np.array([3], dtype=np.int64))
        with pytest.raises(ValueError):
            obj.loss(obj.init_params(0), batch)

    def test_divergent_loss_raises(self):
        obj = MlpClassifier([2, 4, 2], activation="relu")
        x = obj.init_params(0)
        x.blocks[0][:] = 1e200
        batch = Batch(np.full((1, 2), 1e200), np.array([0], dtype=np.int64))
        with pytest.raises(DivergenceError):
            obj.loss_and_grad(x, batch, ActiveSet.full(obj.n_layers))


class TestFiniteDiff:
    def test_linear_gradient_near_exact(self):
        obj = BlockQuadratic([1])
        fd = finite_diff_grad(obj, lv([2.0]), None, h=1e-6)
        assert fd[0][0] == pytest.approx(2.0, abs=1e-8)

    def test_constant_objective_zero(self):
        obj = BlockQuadratic([2], scales=[1e-300])
        fd = finite_diff_grad(obj, lv([1.0, -1.0]), None, h=1e-6)
        assert np.allclose(fd.to_flat(), 0.0, atol=1e-12)

    def test_mlp_agreement_tanh(self):
        obj = MlpClassifier([2, 16, 2], activation="tanh")
        x = obj.init_params(3)
        rng = np.random.default_rng(7)
        batch = Batch(rng.standard_normal((6, 2)), rng.integers(0, 2, 6))
        g = obj.grad(x, batch, ActiveSet.full(obj.n_layers))
        fd = finite_diff_grad(obj, x, batch, h=1e-6)
        scale = max(1e-8, float(np.max(np.abs(fd.to_flat()))))
        rel = np.max(np.abs(g.to_flat() - fd.to_flat())) / scale
        assert rel <= 1e-5

    def test_oracle_self_consistency_across_h(self):
        obj = MlpClassifier([2, 8, 2], activation="tanh")
        x = obj.init_params(4)
        rng = np.random.default_rng(8)
        batch = Batch(rng.standard_normal((5, 2)), rng.integers(0, 2, 5))
        fd5 = finite_diff_grad(obj, x, batch, h=1e-5)
        fd6 = finite_diff_grad(obj, x, batch, h=1e-6)
        assert np.max(np.abs(fd5.to_flat() - fd6.to_flat())) <= 1e-5

    def test_relu_agreement_away_from_kinks(self):
        obj = MlpClassifier([2, 8, 2], activation="relu")
        x = obj.init_params(5)
        rng = np.random.default_rng(9)
        batch = Batch(rng.standard_normal((5, 2)), rng.integers(0, 2, 5))
        g = obj.grad(x, batch, ActiveSet.full(obj.n_layers))
        fd = finite_diff_grad(obj, x, batch, h=1e-6)
        scale = max(1e-8, float(np.max(np.abs(fd.to_flat()))))
        rel = np.max(np.abs(g.to_flat() - fd.to_flat())) / scale
        assert rel <= 1e-4


class TestInitParams:
    def test_quadratic_starts_off_center(self):
        obj = BlockQuadratic([2, 3], centers=[np.array([1.0, 2.0]), np.zeros(3)])
        x = obj.init_params(0)
        assert np.array_equal(x[0], [2.0, 3.0])
        assert np.array_equal(x[1], [1.0, 1.0, 1.0])

    def test_mlp_seeded_and_biases_zero(self):
        obj = MlpClassifier([2, 4, 2], activation="tanh")
        a = obj.init_params(11)
        b = obj.init_params(11)
        c = obj.init_params(12)
        for la, lb in zip(a, b):
            assert np.array_equal(la, lb)
        assert any(not np.array_equal(la, lc) for la, lc in zip(a, c))
        assert np.array_equal(a[1], np.zeros(4))  # first bias block
        assert np.array_equal(a[3], np.zeros(2))  # output bias block
