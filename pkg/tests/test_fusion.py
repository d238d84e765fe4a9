"""Fusion network: forward pass, smooth gradients, proximal operator, training."""

import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import minimize

from vidfuse.data import SynthConfig, split_dataset, split_records, synth_generate
from vidfuse.errors import DataError
from vidfuse.experiment import finite_difference_gradients, max_relative_error
from vidfuse.fusion import (FusionNetParams, PooledBatch, RegConfig,
                            VideoLevelFeatures, fusion_forward,
                            fusion_forward_batch, init_fusion_params, l11_norm,
                            l21_norm, pooled_batch, prox_l21_l11,
                            smooth_loss_and_gradients, train_fusion,
                            video_level_pool, zero_row_count)
from vidfuse.linalg import RngStream

# fixed tiny net (seed 54321) on fixed features (seed 888), recorded from an
# independent layer-by-layer pure-python evaluation
GOLDEN_PROBS = [0.30762442289020503, 0.38299560449349285, 0.3093799726163021]


def prox_objective(w, v, t2, t3):
    w = np.asarray(w, dtype=np.float64).reshape(v.shape)
    return (0.5 * ((w - v) ** 2).sum()
            + t2 * np.sqrt((w * w).sum(axis=1)).sum()
            + t3 * np.abs(w).sum())


class TestVideoLevelPool:
    def test_constant_sequence(self):
        seq = np.tile([1.0, -2.0, 3.0], (5, 1))
        assert np.array_equal(video_level_pool(seq), [1.0, -2.0, 3.0])

    def test_single_frame(self):
        seq = np.array([[4.0, 5.0]])
        assert np.array_equal(video_level_pool(seq), [4.0, 5.0])

    def test_permutation_invariance(self):
        seq = RngStream(1).normal(size=(8, 4))
        perm = RngStream(2).permutation(8)
        assert np.allclose(video_level_pool(seq), video_level_pool(seq[perm]), atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            video_level_pool(np.zeros((0, 3)))


def tiny_net(seed=54321):
    return init_fusion_params(3, 2, 2, 3, RngStream(seed), hidden_units=4,
                              fused_units=3, init_scale=0.5)


def tiny_feats():
    v = RngStream(888).normal(size=7)
    return VideoLevelFeatures(v[:3], v[3:5], v[5:7])


class TestForward:
    def test_golden_values(self):
        probs = fusion_forward(tiny_net(), tiny_feats())
        assert np.allclose(probs, GOLDEN_PROBS, rtol=0, atol=1e-12)

    def test_zero_fusion_layer_cuts_information(self):
        params = tiny_net()
        params.w_fuse[...] = 0.0
        rng = RngStream(3)
        outs = [fusion_forward(params, VideoLevelFeatures(
            rng.normal(size=3), rng.normal(size=2), rng.normal(size=2)))
            for _ in range(5)]
        for out in outs[1:]:
            assert np.array_equal(out, outs[0])

    def test_zero_net_uniform(self):
        params = init_fusion_params(3, 2, 2, 4, RngStream(0), hidden_units=4,
                                    fused_units=3, init_scale=0.0)
        probs = fusion_forward(params, tiny_feats())
        assert np.allclose(probs, 0.25, atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = RngStream(9)
        batch = PooledBatch(rng.normal(size=(20, 3)), rng.normal(size=(20, 2)),
                            rng.normal(size=(20, 2)), np.zeros(20, dtype=np.int64))
        probs = fusion_forward_batch(tiny_net(), batch)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)


class TestSmoothLossAndGradients:
    def _instance(self, seed, hidden="relu"):
        rng = RngStream(seed)
        params = init_fusion_params(3, 4, 2, 3, rng, hidden_units=5, fused_units=4,
                                    init_scale=0.4, hidden=hidden)
        for name, arr in params.named_parameters():
            if name.endswith(".b"):
                arr += rng.uniform(low=-0.3, high=0.3, size=arr.shape)
        batch = PooledBatch(rng.normal(size=(4, 3)), rng.normal(size=(4, 4)),
                            rng.normal(size=(4, 2)),
                            np.array([0, 2, 1, 0], dtype=np.int64))
        return params, batch

    @pytest.mark.parametrize("hidden", ["relu", "sigmoid"])
    @pytest.mark.parametrize("loss", ["squared", "cross_entropy"])
    def test_finite_difference_agreement(self, hidden, loss):
        params, batch = self._instance(12, hidden=hidden)
        lam = 2e-3
        _, analytic = smooth_loss_and_gradients(params, batch, lam, loss)
        numeric = finite_difference_gradients(
            lambda: smooth_loss_and_gradients(params, batch, lam, loss)[0],
            params.named_parameters())
        for name, _ in params.named_parameters():
            assert max_relative_error(analytic[name], numeric[name]) < 1e-4, name

    def test_perfect_prediction_zero_data_loss(self):
        # zero weights plus a huge head bias on the label class make the
        # softmax output exactly one-hot, so the squared data term vanishes
        batch = PooledBatch(np.zeros((1, 3)), np.zeros((1, 2)), np.zeros((1, 2)),
                            np.array([1], dtype=np.int64))
        params = init_fusion_params(3, 2, 2, 3, RngStream(0), init_scale=0.0,
                                    hidden_units=2, fused_units=2)
        params.b_head[...] = np.array([-900.0, 900.0, -900.0])
        loss, _ = smooth_loss_and_gradients(params, batch, 0.0)
        assert loss == 0.0

    def test_weight_decay_term_linear_in_lambda(self):
        params, batch = self._instance(13)
        l0, _ = smooth_loss_and_gradients(params, batch, 0.0)
        l1, _ = smooth_loss_and_gradients(params, batch, 0.01)
        l2, _ = smooth_loss_and_gradients(params, batch, 0.02)
        assert abs((l2 - l0) - 2.0 * (l1 - l0)) < 1e-12


class TestNorms:
    def test_identity_matrix(self):
        eye = np.eye(2)
        assert l21_norm(eye) == 2.0
        assert l11_norm(eye) == 2.0

    def test_pythagorean_row(self):
        assert l21_norm(np.array([[3.0, 4.0]])) == 5.0

    def test_norm_inequalities(self):
        w = RngStream(7).normal(size=(6, 5))
        l21, l11 = l21_norm(w), l11_norm(w)
        assert l21 <= l11 <= np.sqrt(5) * l21 + 1e-12


class TestProx:
    def test_identity_at_zero_thresholds(self):
        v = RngStream(1).normal(size=(5, 4))
        out = prox_l21_l11(v, 0.0, 0.0)
        assert np.array_equal(out, v)
        assert out is not v

    def test_full_soft_threshold_annihilates(self):
        v = RngStream(2).normal(size=(5, 4))
        assert np.all(prox_l21_l11(v, 0.0, np.abs(v).max()) == 0.0)

    def test_worked_row(self):
        out = prox_l21_l11(np.array([[3.0, -1.0]]), 1.0, 0.5)
        # soft-threshold to [2.5, -0.5], norm sqrt(6.5), factor 1 - 1/sqrt(6.5)
        factor = 1.0 - 1.0 / np.sqrt(6.5)
        assert np.allclose(out, [[2.5 * factor, -0.5 * factor]], atol=1e-12)
        assert np.allclose(out, [[1.5196, -0.3039]], atol=1e-4)

    def test_grid_plus_coordinate_descent_oracle_on_worked_row(self):
        v = np.array([[3.0, -1.0]])
        t2, t3 = 1.0, 0.5
        closed = prox_objective(prox_l21_l11(v, t2, t3), v, t2, t3)
        # derivative-free oracle: coarse grid then per-coordinate refinement
        grid = np.linspace(-3.5, 3.5, 71)
        best, best_val = None, np.inf
        for a in grid:
            for b in grid:
                val = prox_objective(np.array([[a, b]]), v, t2, t3)
                if val < best_val:
                    best, best_val = np.array([a, b]), val
        for _ in range(60):
            for k in range(2):
                span = np.linspace(best[k] - 0.1, best[k] + 0.1, 41)
                cands = np.tile(best, (41, 1))
                cands[:, k] = span
                vals = [prox_objective(c[None, :], v, t2, t3) for c in cands]
                best = cands[int(np.argmin(vals))]
                best_val = min(vals)
        assert closed <= best_val + 1e-8

    def test_contraction(self):
        rng = RngStream(3)
        for _ in range(50):
            v = rng.normal(size=(4, 3)) * 2.0
            out = prox_l21_l11(v, rng.uniform(0, 1), rng.uniform(0, 1))
            assert np.linalg.norm(out) <= np.linalg.norm(v) + 1e-12

    def test_rows_zero_or_positive_norm_shared_pattern(self):
        rng = RngStream(4)
        v = rng.normal(size=(30, 6))
        out = prox_l21_l11(v, 0.8, 0.3)
        norms = np.sqrt((out * out).sum(axis=1))
        assert np.all((norms == 0.0) | (norms > 0.0))
        dead = norms == 0.0
        assert np.all(out[dead] == 0.0)
        assert dead.any() and (~dead).any()

    def test_objective_beats_random_candidates(self):
        rng = RngStream(5)
        v = rng.normal(size=(5, 4)) * 1.5
        t2, t3 = 0.6, 0.2
        out = prox_l21_l11(v, t2, t3)
        base = prox_objective(out, v, t2, t3)
        for _ in range(1000):
            cand = out + 0.05 * rng.normal(size=out.shape)
            assert base <= prox_objective(cand, v, t2, t3) + 1e-12

    def test_objective_beats_nelder_mead(self):
        rng = RngStream(6)
        for _ in range(60):
            rows = 1 + rng.integers(6)
            cols = 1 + rng.integers(6)
            v = rng.normal(size=(rows, cols)) * rng.uniform(0.5, 2.5)
            t2 = rng.uniform(0, 1.2)
            t3 = rng.uniform(0, 1.2)
            closed = prox_objective(prox_l21_l11(v, t2, t3), v, t2, t3)
            nm = minimize(prox_objective, v.ravel().copy(), args=(v, t2, t3),
                          method="Nelder-Mead",
                          options={"maxiter": 2000, "fatol": 1e-12, "xatol": 1e-10})
            assert closed <= nm.fun + 1e-8

    def test_cost_scales_linearly_in_width(self):
        rows = 256
        small = RngStream(7).normal(size=(rows, 1500))
        large = RngStream(8).normal(size=(rows, 3000))

        def best_time(v):
            times = []
            for _ in range(9):
                t0 = time.perf_counter()
                prox_l21_l11(v, 0.3, 0.1)
                times.append(time.perf_counter() - t0)
            return min(times)

        prox_l21_l11(small, 0.3, 0.1)  # warm caches
        ratio = best_time(large) / best_time(small)
        assert ratio < 2.3


def _stateless_batches(seed):
    cfg = SynthConfig(num_classes=3, samples_per_class=12, shared_dim=3,
                      unique_dims=(2, 2, 2), noise_scale=0.3,
                      temporal_mode="stateless", pairs=[], seed=seed,
                      feature_dims=(6, 6, 4), seq_len=4, motion_seq_len=4)
    manifest, records = synth_generate(cfg)
    manifest = split_dataset(manifest, records, (0.7, 0.15, 0.15), seed + 1)
    return pooled_batch(split_records(manifest, records, "train"))


class TestTraining:
    def test_reduces_to_plain_gradient_descent(self):
        """lambda1 = lambda2 = lambda3 = 0 must be bit-identical to a
        prox-free gradient descent loop over the same update order."""
        train = _stateless_batches(0)
        cfg = RegConfig(lambda1=0.0, lambda2=0.0, lambda3=0.0, learning_rate=0.5,
                        epochs=25, seed=11, hidden_units=5, fused_units=4,
                        num_classes=3)
        result = train_fusion(cfg, train)

        params = init_fusion_params(6, 6, 4, 3, RngStream(11), hidden_units=5,
                                    fused_units=4, init_scale=cfg.init_scale)
        for _ in range(25):
            _, grads = smooth_loss_and_gradients(params, train, 0.0)
            for name, arr in params.named_parameters():
                arr -= 0.5 * grads[name]
        for (name, a), (_, b) in zip(result.params.named_parameters(),
                                     params.named_parameters()):
            assert np.array_equal(a, b), name

    def test_deterministic_per_seed(self):
        train = _stateless_batches(1)
        cfg = RegConfig(lambda2=0.01, lambda3=1e-4, epochs=20, seed=5,
                        hidden_units=5, fused_units=4, num_classes=3)
        a = train_fusion(cfg, train)
        b = train_fusion(cfg, train)
        assert a.loss_trace == b.loss_trace
        for (_, pa), (_, pb) in zip(a.params.named_parameters(),
                                    b.params.named_parameters()):
            assert np.array_equal(pa, pb)

    def test_huge_lambda2_kills_all_rows(self):
        train = _stateless_batches(2)
        cfg = RegConfig(lambda2=1000.0, epochs=3, seed=2, hidden_units=5,
                        fused_units=4, num_classes=3)
        result = train_fusion(cfg, train)
        assert result.zero_rows_trace[0] == 4
        assert zero_row_count(result.params.w_fuse) == 4
        probs = fusion_forward_batch(result.params, train)
        assert np.allclose(probs, probs[0], atol=1e-12)

    def test_zero_rows_monotone_in_lambda2(self):
        train = _stateless_batches(3)
        counts = []
        for lam2 in (0.0, 0.01, 0.1, 1.0, 10.0):
            cfg = RegConfig(lambda2=lam2, epochs=60, seed=4, hidden_units=6,
                            fused_units=8, num_classes=3)
            counts.append(zero_row_count(train_fusion(cfg, train).params.w_fuse))
        assert counts == sorted(counts)
        assert counts[-1] == 8

    def test_minibatch_mode_runs_and_is_deterministic(self):
        train = _stateless_batches(4)
        cfg = RegConfig(lambda2=0.003, epochs=6, batch_size=8, seed=3,
                        hidden_units=5, fused_units=4, num_classes=3)
        a = train_fusion(cfg, train)
        b = train_fusion(cfg, train)
        assert a.loss_trace == b.loss_trace
        assert len(a.loss_trace) > 6  # several updates per epoch
