"""Optimizer family: update arithmetic, perturbations, reductions, accounting."""

from __future__ import annotations

import math

import numpy as np
import pytest

from sparsam.bandit import BanditConfig, SamplingDistribution, init_uniform
from sparsam.errors import DivergenceError
from sparsam.layered import ActiveSet, LayeredVector, layer_l2_norm
from sparsam.objectives import Batch, BlockQuadratic, MlpClassifier
from sparsam.optimizers import (
    AdamWConfig,
    OptimizerState,
    SamConfig,
    ablation_step,
    adamw_baseline_step,
    adamw_step,
    adasam_step,
    s2sam_step,
    sam_perturb,
    select_layers_ablation,
    sl_s2sam_step,
    slsam_step,
    sparse_sam_step,
)
from sparsam.rng import stream

from conftest import lv, scalar_batch

# One AdamW update from m=v=0, g=1, x=1 (eta=0.1, beta2=0.999, eps=1e-8),
# evaluated at 50 decimal digits and rounded to double:
#   x1 = 1 - 0.1 * 0.1 / sqrt(1e-3 + 1e-8)
ADAMW_SCALAR_X1 = 0.68377381511013370858
# Same update but g = 1.1 from the ascent point 1 + rho = 1.1:
#   x1 = 1 - 0.1 * 0.11 / sqrt(1.21e-3 + 1e-8)
SAM_SCALAR_X1 = 0.68377354070136843407

CFG = AdamWConfig(eta=0.1, weight_decay=0.0, beta1=0.9, beta2=0.999, adam_eps=1e-8)


class TestAdamwStep:
    def test_scalar_frozen_trace(self):
        state = OptimizerState.init([1])
        x, state = adamw_step(state, lv([1.0]), lv([1.0]), ActiveSet.of(0), CFG)
        assert state.m[0][0] == pytest.approx(0.1, rel=1e-15)
        assert state.v[0][0] == pytest.approx(1e-3, rel=1e-15)
        assert x[0][0] == pytest.approx(ADAMW_SCALAR_X1, rel=1e-12)
        assert x[0][0] == pytest.approx(0.683772, abs=5e-6)
        assert state.t == 1

    def test_zero_gradient_isolates_decay(self):
        cfg = AdamWConfig(eta=0.1, weight_decay=0.5)
        state = OptimizerState.init([2])
        x, _ = adamw_step(state, lv([2.0, -4.0]), lv([0.0, 0.0]), ActiveSet.of(0), cfg)
        assert np.array_equal(x[0], np.array([2.0, -4.0]) * (1.0 - 0.1 * 0.5))

    def test_frozen_layer_bit_identical(self):
        state = OptimizerState.init([1, 2])
        x = lv([1.0], [2.0, 3.0])
        g = lv([1.0], [5.0, 5.0])
        x_before = x.copy()
        adamw_step(state, x, g, ActiveSet.of(0), CFG)
        assert np.array_equal(x[1], x_before[1])
        assert np.array_equal(state.m[1], np.zeros(2))
        assert np.array_equal(state.v[1], np.zeros(2))

    def test_nonfinite_gradient_raises(self):
        state = OptimizerState.init([1])
        with pytest.raises(DivergenceError):
            adamw_step(state, lv([1.0]), lv([np.nan]), ActiveSet.of(0), CFG)

    def test_shape_mismatch(self):
        state = OptimizerState.init([1])
        with pytest.raises(ValueError):
            adamw_step(state, lv([1.0, 2.0]), lv([1.0, 2.0]), ActiveSet.of(0), CFG)

    def test_no_bias_correction(self):
        # With correction the first step would be ~eta regardless of beta;
        # without it the magnitudes follow the raw m/sqrt(v) ratio.
        state = OptimizerState.init([1])
        x, _ = adamw_step(state, lv([0.0]), lv([1.0]), ActiveSet.of(0), CFG)
        raw = 0.1 * 0.1 / math.sqrt(1e-3 + 1e-8)
        assert x[0][0] == pytest.approx(-raw, rel=1e-12)


class TestSamPerturb:
    def test_per_layer_three_four(self):
        eps = sam_perturb(lv([3.0, 4.0]), ActiveSet.of(0), SamConfig(0.01, "per_layer"))
        assert np.allclose(eps[0], [0.006, 0.008], rtol=1e-12)

    def test_zero_block_zero_perturbation(self):
        eps = sam_perturb(lv([0.0, 0.0], [3.0, 4.0]), ActiveSet.full(2), SamConfig(0.01, "per_layer"))
        assert np.array_equal(eps[0], [0.0, 0.0])
        assert np.allclose(eps[1], [0.006, 0.008], rtol=1e-12)

    def test_global_joint_scaling(self):
        eps = sam_perturb(lv([3.0], [4.0]), ActiveSet.full(2), SamConfig(0.01, "global"))
        assert eps[0][0] == pytest.approx(0.006, rel=1e-12)
        assert eps[1][0] == pytest.approx(0.008, rel=1e-12)

    def test_per_layer_norms_equal_rho(self):
        rng = np.random.default_rng(0)
        r = LayeredVector([rng.standard_normal(d) for d in (3, 5, 2)])
        eps = sam_perturb(r, ActiveSet.full(3), SamConfig(0.37, "per_layer"))
        for l in range(3):
            assert layer_l2_norm(eps, l) == pytest.approx(0.37, rel=1e-12)

    def test_global_joint_norm_equals_rho(self):
        rng = np.random.default_rng(1)
        r = LayeredVector([rng.standard_normal(d) for d in (3, 5)])
        active = ActiveSet.of(0, 1)
        eps = sam_perturb(r, active, SamConfig(0.37, "global"))
        joint = math.sqrt(sum(layer_l2_norm(eps, l) ** 2 for l in active))
        assert joint == pytest.approx(0.37, rel=1e-12)

    def test_inactive_blocks_zero(self):
        eps = sam_perturb(lv([3.0], [4.0]), ActiveSet.of(1), SamConfig(0.5, "per_layer"))
        assert eps[0][0] == 0.0
        assert eps[1][0] == pytest.approx(0.5, rel=1e-12)

    def test_rho_zero(self):
        eps = sam_perturb(lv([3.0]), ActiveSet.of(0), SamConfig(0.0, "per_layer"))
        assert eps[0][0] == 0.0


def scalar_objective() -> BlockQuadratic:
    return BlockQuadratic([1])


class TestAdasamStep:
    def test_scalar_frozen_trace(self):
        obj = scalar_objective()
        x = lv([1.0])
        state = OptimizerState.init(obj.layer_dims)
        tel = adasam_step(obj, x, None, state, SamConfig(0.1, "global"), CFG)
        assert x[0][0] == pytest.approx(SAM_SCALAR_X1, rel=1e-12)
        assert x[0][0] == pytest.approx(0.683775, abs=5e-6)
        assert tel.grad_passes == 2
        assert tel.loss == pytest.approx(0.5, rel=1e-12)
        assert tel.grad_l1 == pytest.approx(1.0, rel=1e-12)

    def test_rho_zero_equals_adamw(self):
        obj = MlpClassifier([2, 8, 2], activation="tanh")
        rng = np.random.default_rng(3)
        batches = [
            Batch(rng.standard_normal((4, 2)), rng.integers(0, 2, 4), id=i)
            for i in range(50)
        ]
        xa = obj.init_params(0)
        xb = obj.init_params(0)
        sa = OptimizerState.init(obj.layer_dims)
        sb = OptimizerState.init(obj.layer_dims)
        for b in batches:
            adasam_step(obj, xa, b, sa, SamConfig(0.0, "global"), CFG)
            adamw_baseline_step(obj, xb, b, sb, CFG)
            for la, lb in zip(xa, xb):
                assert np.array_equal(la, lb)

    def test_pass_counter_total(self):
        obj = scalar_objective()
        x = lv([1.0])
        state = OptimizerState.init(obj.layer_dims)
        total = sum(
            adasam_step(obj, x, None, state, SamConfig(0.01, "global"), CFG).grad_passes
            for _ in range(7)
        )
        assert total == 14


class TestSparseSamStep:
    def test_single_layer_matches_dense_trace(self):
        # One layer makes per-layer and global normalization coincide.
        obj = scalar_objective()
        x = lv([1.0])
        state = OptimizerState.init(obj.layer_dims)
        tel = sparse_sam_step(
            obj, x, None, state, ActiveSet.of(0), SamConfig(0.1, "per_layer"), CFG
        )
        assert x[0][0] == pytest.approx(SAM_SCALAR_X1, rel=1e-12)
        assert tel.active_param_count == 1
        assert tel.per_layer_r_norms == {0: 1.0}

    def test_rho_zero_equals_masked_adamw(self):
        obj = BlockQuadratic([2, 3], scales=[1.0, 2.0])
        active = ActiveSet.of(1)
        xa = obj.init_params(0)
        xb = obj.init_params(0)
        sa = OptimizerState.init(obj.layer_dims)
        sb = OptimizerState.init(obj.layer_dims)
        for t in range(20):
            batch = scalar_batch(t)
            sparse_sam_step(obj, xa, batch, sa, active, SamConfig(0.0, "per_layer"), CFG)
            g = obj.grad(xb, batch, active)
            adamw_step(sb, xb, g, active, CFG)
            for la, lb in zip(xa, xb):
                assert np.array_equal(la, lb)

    def test_frozen_layers_untouched(self):
        obj = BlockQuadratic([2, 3])
        x = obj.init_params(0)
        before = x.copy()
        state = OptimizerState.init(obj.layer_dims)
        sparse_sam_step(obj, x, None, state, ActiveSet.of(0), SamConfig(0.01, "per_layer"), CFG)
        assert np.array_equal(x[1], before[1])


class TestSlsamStep:
    def test_telemetry_and_distribution_update(self):
        obj = BlockQuadratic([4] * 5)
        x = obj.init_params(0)
        state = OptimizerState.init(obj.layer_dims)
        dist = init_uniform(5, 1.0, 0.02)
        rng = stream(0, "bandit")
        new_dist, tel = slsam_step(
            obj, x, None, state, dist, SamConfig(0.01, "per_layer"), CFG,
            BanditConfig(), rng,
        )
        assert tel.grad_passes == 2
        assert len(tel.active_layers) >= 1
        assert tel.active_param_count == 4 * len(tel.active_layers)
        assert set(tel.per_layer_r_norms) == set(tel.active_layers.indices())
        assert abs(float(np.sum(new_dist.p)) - 1.0) <= 1e-9

    def test_deterministic_trajectories(self):
        def run():
            obj = BlockQuadratic([3, 3, 3], noise_sigma=0.1, noise_seed=1)
            x = obj.init_params(0)
            state = OptimizerState.init(obj.layer_dims)
            dist = init_uniform(3, 1.0, 0.02)
            rng = stream(5, "bandit")
            for t in range(40):
                dist, _ = slsam_step(
                    obj, x, scalar_batch(t), state, dist,
                    SamConfig(0.01, "per_layer"), CFG, BanditConfig(), rng,
                )
            return x.to_flat(), dist.p

        xa, pa = run()
        xb, pb = run()
        assert np.array_equal(xa, xb)
        assert np.array_equal(pa, pb)

    def test_full_budget_matches_dense_layerwise_sam(self):
        obj = BlockQuadratic([2, 3], scales=[1.0, 3.0])
        xa = obj.init_params(0)
        xb = obj.init_params(0)
        sa = OptimizerState.init(obj.layer_dims)
        sb = OptimizerState.init(obj.layer_dims)
        dist = SamplingDistribution(np.ones(2), s=2.0, p_min=0.1)
        rng = stream(6, "bandit")
        sam = SamConfig(0.05, "per_layer")
        for t in range(30):
            batch = scalar_batch(t)
            dist, tel = slsam_step(obj, xa, batch, sa, dist, sam, CFG, BanditConfig(), rng)
            assert tel.active_layers.indices() == [0, 1]
            adasam_step(obj, xb, batch, sb, sam, CFG)
            for la, lb in zip(xa, xb):
                assert np.array_equal(la, lb)
            assert np.allclose(dist.p, np.ones(2), atol=1e-12)


class TestS2samStep:
    def test_bootstrap_equals_adamw(self):
        obj = scalar_objective()
        xa, xb = lv([1.0]), lv([1.0])
        sa = OptimizerState.init(obj.layer_dims)
        sb = OptimizerState.init(obj.layer_dims)
        tel = s2sam_step(obj, xa, None, sa, SamConfig(0.1, "global"), CFG)
        adamw_baseline_step(obj, xb, None, sb, CFG)
        assert np.array_equal(xa[0], xb[0])
        assert tel.grad_passes == 1
        assert tel.per_layer_staleness == {}

    def test_rho_zero_equals_adamw_all_steps(self):
        obj = BlockQuadratic([2, 2], scales=[1.0, 4.0])
        xa = obj.init_params(0)
        xb = obj.init_params(0)
        sa = OptimizerState.init(obj.layer_dims)
        sb = OptimizerState.init(obj.layer_dims)
        for t in range(25):
            batch = scalar_batch(t)
            s2sam_step(obj, xa, batch, sa, SamConfig(0.0, "global"), CFG)
            adamw_baseline_step(obj, xb, batch, sb, CFG)
            for la, lb in zip(xa, xb):
                assert np.array_equal(la, lb)

    def test_one_pass_per_step_and_staleness_one(self):
        obj = BlockQuadratic([2, 2])
        x = obj.init_params(0)
        state = OptimizerState.init(obj.layer_dims)
        passes = 0
        for t in range(10):
            tel = s2sam_step(obj, x, scalar_batch(t), state, SamConfig(0.01, "global"), CFG)
            passes += tel.grad_passes
            if t >= 1:
                assert tel.per_layer_staleness == {0: 1, 1: 1}
        assert passes == 10

    def test_uses_previous_gradient_direction(self):
        # After the bootstrap the perturbation must come from the stashed
        # gradient, not from a fresh ascent pass.
        obj = scalar_objective()
        x = lv([1.0])
        state = OptimizerState.init(obj.layer_dims)
        s2sam_step(obj, x, None, state, SamConfig(0.1, "global"), CFG)
        g_stash = state.prev_grad[0][0]
        x_before = x[0][0]
        s2sam_step(obj, x, None, state, SamConfig(0.1, "global"), CFG)
        # Expected: g evaluated at x_before + rho * sign(g_stash).
        expected_g = x_before + 0.1 * np.sign(g_stash)
        assert state.prev_grad[0][0] == pytest.approx(expected_g, rel=1e-12)


class TestSlS2samStep:
    def run_steps(self, n_steps: int, seed: int = 0):
        obj = BlockQuadratic([2] * 4, noise_sigma=0.05, noise_seed=seed)
        x = obj.init_params(seed)
        state = OptimizerState.init(obj.layer_dims)
        dist = init_uniform(4, 1.2, 0.03)
        rng = stream(seed, "bandit")
        tels = []
        for t in range(n_steps):
            dist, tel = sl_s2sam_step(
                obj, x, scalar_batch(t), state, dist,
                SamConfig(0.05, "per_layer"), CFG, BanditConfig(), rng,
            )
            tels.append(tel)
        return tels, state

    def test_bootstrap_dense_and_stashes_all(self):
        tels, state = self.run_steps(1)
        assert tels[0].active_layers.indices() == [0, 1, 2, 3]
        assert tels[0].grad_passes == 1
        assert state.prev_grad is not None
        assert np.array_equal(state.stash_step, np.ones(4, dtype=np.int64))

    def test_staleness_matches_tracked_gaps(self):
        tels, _ = self.run_steps(200)
        last_stash = {l: 1 for l in range(4)}
        for tel in tels[1:]:
            assert tel.grad_passes == 1
            for l in tel.active_layers:
                assert tel.per_layer_staleness[l] == tel.step - last_stash[l]
                assert tel.per_layer_staleness[l] >= 1
                last_stash[l] = tel.step

    def test_step_two_staleness_one(self):
        # A layer held at p=1 is sampled immediately after the bootstrap.
        obj = BlockQuadratic([2, 2])
        x = obj.init_params(0)
        state = OptimizerState.init(obj.layer_dims)
        dist = SamplingDistribution(np.array([1.0, 0.1]), s=1.1, p_min=0.1)
        rng = stream(1, "bandit")
        for t in range(2):
            dist, tel = sl_s2sam_step(
                obj, x, scalar_batch(t), state, dist,
                SamConfig(0.01, "per_layer"), CFG, BanditConfig(), rng,
            )
        assert tel.per_layer_staleness[0] == 1

    def test_unsampled_gap_increments_staleness(self):
        tels, _ = self.run_steps(300, seed=2)
        # Find a layer that sat out k steps; its next staleness must be k+1.
        seen_gap = False
        last = {l: 1 for l in range(4)}
        for tel in tels[1:]:
            for l in tel.active_layers:
                gap = tel.step - last[l] - 1
                if gap >= 1:
                    assert tel.per_layer_staleness[l] == gap + 1
                    seen_gap = True
                last[l] = tel.step
        assert seen_gap


class TestAblationSelectors:
    def test_greedy_ranks_largest_scale_first(self):
        obj = BlockQuadratic([1, 1], scales=[1.0, 10.0])
        x = lv([1.0], [1.0])
        active = select_layers_ablation("greedy_topk", obj, x, None, 1, stream(0, "sel"))
        assert active.indices() == [1]

    def test_uniform_k_equals_n_full_set(self):
        obj = BlockQuadratic([1, 1, 1])
        x = obj.init_params(0)
        active = select_layers_ablation("uniform_random", obj, x, None, 3, stream(0, "sel"))
        assert active.indices() == [0, 1, 2]

    def test_greedy_tie_lower_index(self):
        obj = BlockQuadratic([1, 1], scales=[1.0, 1.0])
        x = lv([1.0], [1.0])
        active = select_layers_ablation("greedy_topk", obj, x, None, 1, stream(0, "sel"))
        assert active.indices() == [0]

    def test_k_out_of_range(self):
        obj = BlockQuadratic([1, 1])
        with pytest.raises(ValueError):
            select_layers_ablation("uniform_random", obj, obj.init_params(0), None, 3, stream(0, "s"))
        with pytest.raises(ValueError):
            select_layers_ablation("uniform_random", obj, obj.init_params(0), None, 0, stream(0, "s"))

    def test_bandit_kind_rejected(self):
        obj = BlockQuadratic([1, 1])
        with pytest.raises(ValueError):
            select_layers_ablation("bandit", obj, obj.init_params(0), None, 1, stream(0, "s"))

    def test_uniform_random_spread(self):
        obj = BlockQuadratic([1] * 6)
        x = obj.init_params(0)
        rng = stream(4, "sel")
        counts = np.zeros(6)
        for _ in range(2000):
            for l in select_layers_ablation("uniform_random", obj, x, None, 2, rng):
                counts[l] += 1
        assert np.all(np.abs(counts / 2000 - 2 / 6) < 0.05)

    def test_greedy_step_charges_selection_pass(self):
        obj = BlockQuadratic([2, 2])
        x = obj.init_params(0)
        state = OptimizerState.init(obj.layer_dims)
        tel = ablation_step(
            "greedy_topk", obj, x, None, state, 1, SamConfig(0.01, "per_layer"), CFG,
            stream(0, "sel"),
        )
        assert tel.selection_param_count == obj.dim
        tel2 = ablation_step(
            "uniform_random", obj, x, None, state, 1, SamConfig(0.01, "per_layer"), CFG,
            stream(0, "sel"),
        )
        assert tel2.selection_param_count == 0


class TestMomentRatioBound:
    def test_moment_ratio_bounded_with_small_beta2(self):
        # beta2 <= sqrt(beta1) caps m^2/(v + eps); exhaustive run lives in
        # the acceptance suite, this is a quick smoke over 500 steps.
        cfg = AdamWConfig(eta=1e-3, beta1=0.9, beta2=0.94)
        obj = BlockQuadratic([3, 3], noise_sigma=0.1, noise_seed=7)
        x = obj.init_params(0)
        state = OptimizerState.init(obj.layer_dims)
        dist = init_uniform(2, 1.0, 0.05)
        rng = stream(7, "bandit")
        worst = 0.0
        for t in range(500):
            dist, _ = slsam_step(
                obj, x, scalar_batch(t), state, dist,
                SamConfig(0.01, "per_layer"), cfg, BanditConfig(), rng,
            )
            for l in range(2):
                ratio = np.max(state.m[l] ** 2 / (state.v[l] + cfg.adam_eps))
                worst = max(worst, float(ratio))
        assert worst <= 8.0
