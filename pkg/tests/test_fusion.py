import math

import numpy as np
import pytest

from audiohalluc.evaluation import compute_metrics
from audiohalluc.fusion import (
    EpochLog,
    FusionError,
    FusionHead,
    TrainConfig,
    adamw_step,
    backward,
    batch_loss_and_grads,
    bce_loss,
    fd_gradients,
    forward,
    gradient_check,
    init_head,
    init_optimizer,
    load_head,
    predict,
    predict_scores,
    save_head,
    snap_f32,
    train,
)
from synth import planted_product_triples


def zero_head(dim_a=3, dim_t=3, hidden=2):
    return FusionHead(
        w_a=np.zeros((hidden, dim_a)),
        b_a=np.zeros(hidden),
        w_t=np.zeros((hidden, dim_t)),
        b_t=np.zeros(hidden),
        w_out=np.zeros(hidden),
        b_out=0.0,
    )


def random_head(dim_a, dim_t, hidden, seed):
    return init_head(dim_a, dim_t, hidden, np.random.default_rng(seed))


class TestForward:
    def test_zero_parameters_give_half(self):
        y_hat, _ = forward(zero_head(), np.ones(3), np.ones(3))
        assert y_hat == 0.5

    def test_scalar_hand_case(self):
        # d=1, D=1, unit weights, zero biases, inputs 2 and 3:
        # fused = relu(2) * relu(3) = 6, y_hat = sigmoid(6)
        head = FusionHead(
            w_a=np.array([[1.0]]),
            b_a=np.zeros(1),
            w_t=np.array([[1.0]]),
            b_t=np.zeros(1),
            w_out=np.array([1.0]),
            b_out=0.0,
        )
        y_hat, cache = forward(head, np.array([2.0]), np.array([3.0]))
        assert cache.fused[0] == 6.0
        assert y_hat == pytest.approx(1.0 / (1.0 + math.exp(-6.0)), abs=1e-15)
        assert y_hat == pytest.approx(0.99753, abs=5e-6)

    def test_relu_kills_branch(self):
        head = FusionHead(
            w_a=np.full((2, 3), -1.0),
            b_a=np.zeros(2),
            w_t=np.ones((2, 3)),
            b_t=np.zeros(2),
            w_out=np.ones(2),
            b_out=-1.5,
        )
        y_hat, cache = forward(head, np.ones(3), np.ones(3))
        assert np.all(cache.act_a == 0.0)
        assert np.all(cache.fused == 0.0)
        assert y_hat == pytest.approx(1.0 / (1.0 + math.exp(1.5)), abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(FusionError, match="shape"):
            forward(zero_head(dim_a=3), np.ones(4), np.ones(3))

    def test_branch_swap_symmetry(self):
        # elementwise product commutes, so swapping branches wholesale
        # leaves the output unchanged
        head = random_head(5, 7, 4, seed=0)
        swapped = FusionHead(
            w_a=head.w_t.copy(),
            b_a=head.b_t.copy(),
            w_t=head.w_a.copy(),
            b_t=head.b_a.copy(),
            w_out=head.w_out.copy(),
            b_out=head.b_out,
        )
        rng = np.random.default_rng(1)
        h_a = rng.standard_normal(5)
        h_t = rng.standard_normal(7)
        assert forward(head, h_a, h_t)[0] == forward(swapped, h_t, h_a)[0]

    def test_inputs_never_modified(self):
        head = random_head(4, 4, 3, seed=2)
        h_a = np.random.default_rng(3).standard_normal(4)
        h_t = np.random.default_rng(4).standard_normal(4)
        a_copy, t_copy = h_a.copy(), h_t.copy()
        forward(head, h_a, h_t)
        assert np.array_equal(h_a, a_copy) and np.array_equal(h_t, t_copy)


class TestBceLoss:
    def test_half_either_label(self):
        assert bce_loss(0.5, 0) == pytest.approx(math.log(2.0), abs=1e-15)
        assert bce_loss(0.5, 1) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_direct_evaluation(self):
        assert bce_loss(0.9, 1) == pytest.approx(-math.log(0.9), abs=1e-15)
        assert bce_loss(0.9, 1) == pytest.approx(0.105361, abs=1e-6)

    def test_perfect_prediction_within_clamp(self):
        assert bce_loss(1.0, 1) == pytest.approx(0.0, abs=1e-11)
        assert bce_loss(0.0, 0) == pytest.approx(0.0, abs=1e-11)

    def test_clamp_bounds_worst_case(self):
        assert bce_loss(0.0, 1) == pytest.approx(-math.log(1e-12), rel=1e-9)
        assert bce_loss(1.0, 0) <= -math.log(1e-12) * 1.01

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            assert bce_loss(float(rng.random()), int(rng.integers(2))) >= 0.0


class TestBackward:
    def test_saturated_perfect_prediction_zero_grads(self):
        # sigmoid(50) rounds to exactly 1.0 in float64, so y_hat == y
        head = zero_head()
        head.b_out = 50.0
        y_hat, cache = forward(head, np.ones(3), np.ones(3))
        assert y_hat == 1.0
        grads = backward(head, cache, 1)
        for name, g in grads.items():
            assert np.all(np.asarray(g) == 0.0), name

    def test_zero_head_bias_gradient(self):
        # composite derivative at logit 0 is y_hat - y = -0.5
        head = zero_head()
        _, cache = forward(head, np.ones(3), np.ones(3))
        grads = backward(head, cache, 1)
        assert float(grads.b_out) == -0.5

    def test_stale_cache_rejected(self):
        head = zero_head(dim_a=3)
        _, cache = forward(head, np.ones(3), np.ones(3))
        other = zero_head(dim_a=5)
        with pytest.raises(FusionError, match="stale"):
            backward(other, cache, 1)

    @pytest.mark.parametrize("hidden,dim", [(1, 8), (4, 8), (16, 32)])
    def test_matches_finite_differences(self, hidden, dim):
        rng = np.random.default_rng(hidden * 100 + dim)
        for rep in range(4):
            head = random_head(dim, dim, hidden, seed=rep)
            h_a = rng.standard_normal(dim)
            h_t = rng.standard_normal(dim)
            y = int(rng.integers(2))
            assert gradient_check(head, h_a, h_t, y) <= 1e-4

    def test_checker_catches_wrong_gradients(self):
        # sanity: a corrupted analytic gradient must be flagged
        head = random_head(6, 6, 4, seed=9)
        rng = np.random.default_rng(10)
        h_a, h_t, y = rng.standard_normal(6), rng.standard_normal(6), 1
        _, cache = forward(head, h_a, h_t)
        good = backward(head, cache, y)
        numeric = fd_gradients(head, h_a, h_t, y)
        bad = np.asarray(good.w_a).copy()
        bad[0, 0] += 0.05
        denom = np.linalg.norm(bad - numeric.w_a) / (
            np.linalg.norm(bad) + np.linalg.norm(numeric.w_a)
        )
        assert denom > 1e-4


class TestAdamW:
    def test_zero_grad_zero_decay_is_identity(self):
        head = random_head(3, 3, 2, seed=0)
        state = init_optimizer(head, lr=0.1)
        grads = backward(head, forward(head, np.zeros(3) + 1, np.ones(3))[1], 1)
        zero = type(grads)(
            w_a=np.zeros_like(head.w_a),
            b_a=np.zeros_like(head.b_a),
            w_t=np.zeros_like(head.w_t),
            b_t=np.zeros_like(head.b_t),
            w_out=np.zeros_like(head.w_out),
            b_out=np.float64(0.0),
        )
        new_head, new_state = adamw_step(head, zero, state)
        assert new_state.step_count == 1
        for name in ("w_a", "b_a", "w_t", "b_t", "w_out"):
            assert np.array_equal(getattr(new_head, name), getattr(head, name))
        assert new_head.b_out == head.b_out

    def test_scalar_hand_computation(self):
        # theta=1, g=1, lr=0.001, wd=0.01, one step from t=0:
        # m_hat = v_hat = 1, update = lr/(1+eps), decay = lr*wd*theta
        head = FusionHead(
            w_a=np.array([[1.0]]),
            b_a=np.zeros(1),
            w_t=np.array([[1.0]]),
            b_t=np.zeros(1),
            w_out=np.array([1.0]),
            b_out=1.0,
        )
        state = init_optimizer(head, lr=0.001, weight_decay=0.01)
        ones = type(backward(head, forward(head, np.ones(1), np.ones(1))[1], 1))(
            w_a=np.ones((1, 1)),
            b_a=np.ones(1),
            w_t=np.ones((1, 1)),
            b_t=np.ones(1),
            w_out=np.ones(1),
            b_out=np.float64(1.0),
        )
        new_head, _ = adamw_step(head, ones, state)
        expected = 1.0 - 0.001 * (1.0 / (1.0 + 1e-8)) - 0.001 * 0.01 * 1.0
        assert new_head.w_a[0, 0] == pytest.approx(expected, abs=1e-12)
        assert new_head.b_out == pytest.approx(expected, abs=1e-12)
        assert f"{new_head.b_out:.6f}" == "0.998990"

    def test_identical_tensors_get_identical_updates(self):
        head = FusionHead(
            w_a=np.full((2, 2), 0.7),
            b_a=np.zeros(2),
            w_t=np.full((2, 2), 0.7),
            b_t=np.zeros(2),
            w_out=np.ones(2),
            b_out=0.0,
        )
        state = init_optimizer(head, lr=0.01, weight_decay=0.1)
        grads = type(backward(head, forward(head, np.ones(2), np.ones(2))[1], 1))(
            w_a=np.full((2, 2), 0.3),
            b_a=np.zeros(2),
            w_t=np.full((2, 2), 0.3),
            b_t=np.zeros(2),
            w_out=np.zeros(2),
            b_out=np.float64(0.0),
        )
        new_head, _ = adamw_step(head, grads, state)
        assert np.array_equal(new_head.w_a, new_head.w_t)

    def test_nonfinite_gradient_aborts(self):
        head = zero_head()
        state = init_optimizer(head, lr=0.01)
        grads = backward(head, forward(head, np.ones(3), np.ones(3))[1], 1)
        grads.w_a[0, 0] = np.nan
        with pytest.raises(FusionError, match="non-finite gradient"):
            adamw_step(head, grads, state)


class TestBatchPath:
    def test_batch_equals_per_sample_loop(self):
        # the vectorized trainer path must agree with the single-pair
        # ops that the finite-difference oracle certifies
        rng = np.random.default_rng(7)
        head = random_head(5, 6, 4, seed=7)
        n = 9
        audio = rng.standard_normal((n, 5))
        text = rng.standard_normal((n, 6))
        labels = (rng.random(n) < 0.5).astype(float)
        loss, grads = batch_loss_and_grads(head, audio, text, labels)

        losses = []
        sums = {name: np.zeros_like(np.asarray(g)) for name, g in grads.items()}
        for i in range(n):
            y_hat, cache = forward(head, audio[i], text[i])
            losses.append(bce_loss(y_hat, int(labels[i])))
            for name, g in backward(head, cache, int(labels[i])).items():
                sums[name] = sums[name] + np.asarray(g)
        assert loss == pytest.approx(float(np.mean(losses)), rel=1e-12)
        for name, g in grads.items():
            assert np.allclose(np.asarray(g), sums[name] / n, rtol=1e-10, atol=1e-12)


class TestTrain:
    def triples(self, n=240, dim=12, seed=0):
        data = planted_product_triples(n, dim, seed=seed)
        cut = int(n * 0.75)
        return data[:cut], data[cut:]

    def config(self, **kwargs):
        defaults = dict(hidden_size=12, batch_size=32, lr=0.01, max_epochs=40,
                        patience=40, seed=5)
        defaults.update(kwargs)
        return TrainConfig(**defaults)

    def test_learns_separable_task(self):
        train_t, val_t = self.triples()
        head, log = train(train_t, val_t, self.config())
        assert max(entry.val_f1 for entry in log) >= 0.95

    def test_zero_epochs_returns_initialized_head(self):
        train_t, val_t = self.triples(n=40)
        head, log = train(train_t, val_t, self.config(max_epochs=0, patience=0))
        assert log == []
        rng = np.random.default_rng(5)
        expected = snap_f32(init_head(12, 12, 12, rng))
        assert np.array_equal(head.w_a, expected.w_a)

    def test_same_seed_identical_logs_and_params(self):
        train_t, val_t = self.triples(n=120)
        cfg = self.config(max_epochs=8, patience=8)
        head_a, log_a = train(train_t, val_t, cfg)
        head_b, log_b = train(train_t, val_t, cfg)
        assert log_a == log_b
        for name in ("w_a", "b_a", "w_t", "b_t", "w_out"):
            assert np.array_equal(getattr(head_a, name), getattr(head_b, name))
        assert head_a.b_out == head_b.b_out

    def test_training_loss_decreases(self):
        train_t, val_t = self.triples()
        _, log = train(train_t, val_t, self.config(max_epochs=12, patience=12))
        assert log[10].train_loss < log[0].train_loss

    def test_single_class_train_rejected(self):
        train_t, val_t = self.triples(n=40)
        positives = [t for t in train_t if t[0]]
        with pytest.raises(FusionError, match="single class"):
            train(positives, val_t, self.config())

    def test_empty_split_rejected(self):
        train_t, val_t = self.triples(n=40)
        with pytest.raises(FusionError, match="empty"):
            train(train_t, [], self.config())

    def test_patience_stops_early(self):
        train_t, val_t = self.triples(n=120)
        _, log = train(train_t, val_t, self.config(max_epochs=40, patience=2))
        assert len(log) <= 40

    def test_normalize_inputs_flag(self):
        train_t, val_t = self.triples(n=80)
        cfg_raw = self.config(max_epochs=3, patience=3)
        cfg_norm = self.config(max_epochs=3, patience=3, normalize_inputs=True)
        _, log_raw = train(train_t, val_t, cfg_raw)
        _, log_norm = train(train_t, val_t, cfg_norm)
        assert log_raw != log_norm

    def test_input_vectors_never_modified(self):
        train_t, val_t = self.triples(n=60)
        snapshot = [(l, a.copy(), t.copy()) for l, a, t in train_t]
        train(train_t, val_t, self.config(max_epochs=2, patience=2, normalize_inputs=True))
        for (_, a, t), (_, a0, t0) in zip(train_t, snapshot):
            assert np.array_equal(a, a0) and np.array_equal(t, t0)

    def test_patience_must_not_exceed_max_epochs(self):
        with pytest.raises(FusionError, match="patience"):
            TrainConfig(max_epochs=5, patience=6)


class TestPredict:
    def test_boundary_threshold_is_positive(self):
        pred = predict(zero_head(), np.ones(3), np.ones(3), threshold=0.5)
        assert pred.score == 0.5
        assert pred.hallucinated is True

    def test_zero_head_scores_half_everywhere(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            pred = predict(zero_head(), rng.standard_normal(3), rng.standard_normal(3))
            assert pred.score == 0.5

    def test_threshold_one_never_fires_for_interior_scores(self):
        head = random_head(4, 4, 3, seed=1)
        rng = np.random.default_rng(2)
        hits = [
            predict(head, rng.standard_normal(4), rng.standard_normal(4), threshold=1.0).hallucinated
            for _ in range(20)
        ]
        assert not any(hits)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        head = snap_f32(random_head(6, 5, 4, seed=3))
        path = tmp_path / "head.fush"
        save_head(head, path)
        loaded = load_head(path)
        for name in ("w_a", "b_a", "w_t", "b_t", "w_out"):
            assert np.array_equal(getattr(loaded, name), getattr(head, name))
        assert loaded.b_out == head.b_out
        # second save is byte-identical
        path2 = tmp_path / "head2.fush"
        save_head(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_reload_reproduces_predictions(self, tmp_path):
        data = planted_product_triples(80, 8, seed=4)
        train_t, val_t = data[:60], data[60:]
        head, _ = train(train_t, val_t, TrainConfig(hidden_size=6, max_epochs=3, patience=3, seed=1))
        path = tmp_path / "head.fush"
        save_head(head, path)
        loaded = load_head(path)
        rng = np.random.default_rng(9)
        audio = rng.standard_normal((50, 8))
        text = rng.standard_normal((50, 8))
        assert np.array_equal(
            predict_scores(head, audio, text), predict_scores(loaded, audio, text)
        )

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.fush"
        path.write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNK")
        with pytest.raises(FusionError, match="magic"):
            load_head(path)

    def test_size_mismatch(self, tmp_path):
        head = snap_f32(random_head(3, 3, 2, seed=0))
        path = tmp_path / "head.fush"
        save_head(head, path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FusionError, match="size"):
            load_head(path)
