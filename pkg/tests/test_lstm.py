"""Recurrent sequence classifier: cell math, BPTT gradients, training."""

import math

import numpy as np
import pytest

from vidfuse.baselines import predict_pooled_softmax, train_pooled_softmax
from vidfuse.data import ConfusablePair, SynthConfig, split_dataset, split_records, \
    stream_sequences, synth_generate
from vidfuse.errors import DataError
from vidfuse.experiment import finite_difference_gradients, max_relative_error
from vidfuse.linalg import RngStream
from vidfuse.lstm import (LstmLayerParams, LstmStack, LstmTrainConfig,
                          init_lstm_stack, lstm_cell_forward, lstm_gradients,
                          lstm_sequence_forward, predict_video, score_sequences,
                          train_lstm, zero_lstm_stack)
from vidfuse.metrics import accuracy

# per-step probabilities of a fixed tiny stack (weights from seed 12345,
# inputs from seed 777), recorded from an independent pure-python
# step-by-step evaluation of the recurrence
GOLDEN_PROBS = [
    [0.499117381876092, 0.5008826181239081],
    [0.49974749630240584, 0.5002525036975942],
    [0.5009253069419948, 0.49907469305800517],
    [0.5005511247635046, 0.49944887523649545],
    [0.5022108306395723, 0.4977891693604277],
]


def golden_stack():
    return init_lstm_stack(3, (4, 3), 2, RngStream(12345), scale=0.35, forget_bias=0.6)


def golden_seq():
    return RngStream(777).normal(size=(5, 3))


def scalar_reference_cell(x, h_prev, c_prev):
    """Independent evaluation of the 1-unit, all-weights-one cell."""
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    i = sig(x + h_prev + c_prev)
    f = sig(x + h_prev + c_prev)
    g = math.tanh(x + h_prev)
    c = f * c_prev + i * g
    o = sig(x + h_prev + c)
    h = o * math.tanh(c)
    return h, c


class TestCellForward:
    def test_zero_params_reach_fixed_point(self):
        params = zero_lstm_stack(3, (4,), 2).layers[0]
        h, c, cache = lstm_cell_forward(params, np.zeros(3), np.zeros(4), np.zeros(4))
        assert np.array_equal(h, np.zeros(4))
        assert np.array_equal(c, np.zeros(4))
        assert np.allclose(cache["i"], 0.5)
        assert np.allclose(cache["candidate"], 0.0)

    def test_zero_params_halve_previous_cell(self):
        params = zero_lstm_stack(3, (4,), 2).layers[0]
        prev = np.array([1.0, -2.0, 0.5, 4.0])
        _, c, _ = lstm_cell_forward(params, np.zeros(3), np.zeros(4), prev)
        assert np.allclose(c, 0.5 * prev, atol=1e-15)

    def test_one_unit_all_weights_one(self):
        ones = lambda shape: np.ones(shape)
        params = LstmLayerParams(
            w_xi=ones((1, 1)), w_xf=ones((1, 1)), w_xc=ones((1, 1)), w_xo=ones((1, 1)),
            w_hi=ones((1, 1)), w_hf=ones((1, 1)), w_hc=ones((1, 1)), w_ho=ones((1, 1)),
            w_ci=ones(1), w_cf=ones(1), w_co=ones(1),
            b_i=np.zeros(1), b_f=np.zeros(1), b_c=np.zeros(1), b_o=np.zeros(1))
        h, c, _ = lstm_cell_forward(params, np.ones(1), np.zeros(1), np.zeros(1))
        h_ref, c_ref = scalar_reference_cell(1.0, 0.0, 0.0)
        assert abs(h[0] - h_ref) < 1e-14
        assert abs(c[0] - c_ref) < 1e-14


class TestSequenceForward:
    def test_golden_values(self):
        probs = lstm_sequence_forward(golden_stack(), golden_seq())
        assert np.allclose(probs, GOLDEN_PROBS, rtol=0, atol=1e-12)

    def test_single_step_equals_cell_chain(self):
        stack = golden_stack()
        x = RngStream(4).normal(size=(1, 3))
        probs = lstm_sequence_forward(stack, x)
        h = x[0]
        for layer in stack.layers:
            h, _, _ = lstm_cell_forward(layer, h, np.zeros(layer.hidden_dim),
                                        np.zeros(layer.hidden_dim))
        logits = stack.w_head @ h + stack.b_head
        expected = np.exp(logits - logits.max())
        expected /= expected.sum()
        assert np.allclose(probs[0], expected, atol=1e-12)

    def test_zero_stack_uniform(self):
        stack = zero_lstm_stack(3, (4, 3), 5)
        probs = lstm_sequence_forward(stack, RngStream(1).normal(size=(6, 3)))
        assert np.allclose(probs, 0.2, atol=1e-15)

    def test_empty_sequence_rejected(self):
        with pytest.raises(DataError, match="empty sequence"):
            lstm_sequence_forward(golden_stack(), np.zeros((0, 3)))

    def test_predict_video_is_last_row(self):
        stack = golden_stack()
        seq = golden_seq()
        assert np.array_equal(predict_video(stack, seq),
                              lstm_sequence_forward(stack, seq)[-1])

    def test_predict_video_pure(self):
        stack = golden_stack()
        seq = golden_seq()
        first = predict_video(stack, seq)
        second = predict_video(stack, seq)
        assert np.array_equal(first, second)


class TestGradients:
    def test_matches_finite_differences(self):
        rng = RngStream(21)
        stack = init_lstm_stack(3, (4, 3), 3, rng, scale=0.4, forget_bias=0.5)
        batch = [(rng.normal(size=(5, 3)), 1), (rng.normal(size=(4, 3)), 2)]
        _, analytic = lstm_gradients(stack, batch)
        numeric = finite_difference_gradients(lambda: lstm_gradients(stack, batch)[0],
                                              stack.named_parameters())
        for name, _ in stack.named_parameters():
            assert max_relative_error(analytic[name], numeric[name]) < 1e-4, name

    def test_scalar_model_hand_gradient(self):
        # 1 unit, T=1: dL/db_o has the closed form below for cross-entropy
        # against class 0 of a 2-class head with zero head weights
        rng = RngStream(33)
        stack = init_lstm_stack(1, (1,), 2, rng, scale=0.5, forget_bias=0.0)
        stack.w_head[...] = np.array([[1.0], [-1.0]])
        stack.b_head[...] = 0.0
        x = np.array([[0.7]])
        loss, grads = lstm_gradients(stack, [(x, 0)])
        p = lstm_sequence_forward(stack, x)[0]
        lp = stack.layers[0]
        i, f, o, g, h, c = _scalar_forward(lp, 0.7)
        dh = (p[0] - 1.0) * 1.0 + p[1] * -1.0  # d loss / d h
        do = dh * math.tanh(c)
        dbo = do * o * (1 - o)
        assert abs(grads["layers.0.b_o"][0] - dbo) < 1e-12
        assert abs(loss + math.log(p[0])) < 1e-12

    def test_duplicated_batch_same_gradients(self):
        rng = RngStream(5)
        stack = init_lstm_stack(2, (3,), 2, rng, scale=0.3)
        batch = [(rng.normal(size=(3, 2)), 0), (rng.normal(size=(4, 2)), 1)]
        loss1, g1 = lstm_gradients(stack, batch)
        loss2, g2 = lstm_gradients(stack, batch + batch)
        assert abs(loss1 - loss2) < 1e-12
        for name in g1:
            assert np.allclose(g1[name], g2[name], rtol=1e-12, atol=1e-15), name


def _scalar_forward(lp, x):
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    i = sig(lp.w_xi[0, 0] * x + lp.b_i[0])
    f = sig(lp.w_xf[0, 0] * x + lp.b_f[0])
    g = math.tanh(lp.w_xc[0, 0] * x + lp.b_c[0])
    c = i * g
    o = sig(lp.w_xo[0, 0] * x + lp.w_co[0] * c + lp.b_o[0])
    h = o * math.tanh(c)
    return i, f, o, g, h, c


def _tiny_ordered_dataset(seed):
    cfg = SynthConfig(
        num_classes=4, samples_per_class=20, shared_dim=4, unique_dims=(2, 2, 2),
        noise_scale=0.15, temporal_mode="ordered-segments",
        pairs=[ConfusablePair(0, 1, "order"), ConfusablePair(2, 3, "order")],
        seed=seed, feature_dims=(8, 8, 4), seq_len=12, motion_seq_len=12,
        num_segments=3)
    manifest, records = synth_generate(cfg)
    manifest = split_dataset(manifest, records, (0.5, 0.2, 0.3), seed + 1)
    return (stream_sequences(split_records(manifest, records, "train"), "spatial"),
            stream_sequences(split_records(manifest, records, "test"), "spatial"))


class TestTraining:
    def test_bit_identical_reruns(self):
        train, _ = _tiny_ordered_dataset(0)
        cfg = LstmTrainConfig(learning_rate=0.1, momentum=0.9, batch_size=10,
                              max_iterations=15, seed=7, hidden_dims=(6, 5),
                              num_classes=4)
        a = train_lstm(cfg, train)
        b = train_lstm(cfg, train)
        assert a.loss_trace == b.loss_trace
        for (_, pa), (_, pb) in zip(a.stack.named_parameters(), b.stack.named_parameters()):
            assert np.array_equal(pa, pb)

    def test_single_class_loss_trends_down(self):
        rng = RngStream(40)
        data = [(rng.normal(size=(6, 3)), 0) for _ in range(12)]
        cfg = LstmTrainConfig(learning_rate=0.2, momentum=0.9, batch_size=12,
                              max_iterations=50, seed=3, hidden_dims=(5,),
                              num_classes=2)
        trace = np.array(train_lstm(cfg, data).loss_trace)
        steps = np.arange(len(trace))
        slope = np.polyfit(steps, trace, 1)[0]
        assert slope < 0
        assert trace[-1] < trace[0]

    def test_beats_mean_pooled_softmax_on_ordered_data(self):
        gaps = []
        for seed in range(3):
            train, test = _tiny_ordered_dataset(seed)
            cfg = LstmTrainConfig(learning_rate=0.12, momentum=0.9, batch_size=10,
                                  max_iterations=600, seed=seed + 2,
                                  hidden_dims=(16, 12), num_classes=4)
            stack = train_lstm(cfg, train).stack
            test_seqs = [s for s, _ in test]
            labels = np.array([l for _, l in test])
            lstm_acc = accuracy(score_sequences(stack, test_seqs), labels)[0]
            base = train_pooled_softmax(train, 4, learning_rate=0.5, epochs=400,
                                        seed=seed + 3)
            base_acc = accuracy(predict_pooled_softmax(base, test_seqs), labels)[0]
            gaps.append(lstm_acc - base_acc)
        assert float(np.mean(gaps)) > 0.05

    def test_order_sensitivity_of_trained_stack(self):
        train, test = _tiny_ordered_dataset(1)
        cfg = LstmTrainConfig(learning_rate=0.12, momentum=0.9, batch_size=10,
                              max_iterations=200, seed=9, hidden_dims=(8, 6),
                              num_classes=4)
        stack = train_lstm(cfg, train).stack
        seq = test[0][0]
        forward = predict_video(stack, seq)
        backward = predict_video(stack, seq[::-1].copy())
        assert not np.allclose(forward, backward, atol=1e-6)

    def test_inconsistent_dims_rejected(self):
        data = [(np.zeros((3, 4)), 0), (np.zeros((3, 5)), 1)]
        with pytest.raises(DataError, match="inconsistent feature dims"):
            train_lstm(LstmTrainConfig(max_iterations=1, hidden_dims=(3,)), data)

    def test_empty_dataset_rejected(self):
        with pytest.raises(DataError, match="empty training set"):
            train_lstm(LstmTrainConfig(max_iterations=1, hidden_dims=(3,)), [])
