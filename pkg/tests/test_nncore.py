"""Layer kernels checked against finite differences and scalar recomputation.

grad_check (central differences, h=1e-5) is the oracle for every analytic
gradient; check_layer_gradients wires it to a layer's inputs and parameters.
"""

import numpy as np
import pytest

from flowsentry import nncore
from flowsentry.errors import ParameterError, ShapeError

TOL = 1e-4


def check_layer_gradients(make_layer, x_shape, seed, train=False):
    """Max relative FD error over the layer's input and every parameter.

    Loss is sum(out * R) with a fixed random weighting R, so every output
    element influences the scalar.
    """
    rng = np.random.default_rng(seed)
    layer = make_layer(np.random.default_rng(seed + 1))
    x0 = rng.normal(size=x_shape)
    R = rng.normal(size=layer.forward(x0.copy(), train=train).shape)

    worst = {}

    def run_input(flat):
        out = layer.forward(flat.reshape(x_shape), train=train)
        return float((out * R).sum())

    layer.forward(x0.copy(), train=train)
    dx = layer.backward(R.copy())
    worst["x"] = nncore.grad_check(run_input, x0.ravel().copy(), dx.ravel())

    for name in layer.params:
        shape = layer.params[name].shape

        def run_param(flat, name=name, shape=shape):
            saved = layer.params[name].copy()
            layer.params[name][...] = flat.reshape(shape)
            out = layer.forward(x0.copy(), train=train)
            layer.params[name][...] = saved
            return float((out * R).sum())

        layer.forward(x0.copy(), train=train)
        layer.backward(R.copy())
        worst[name] = nncore.grad_check(
            run_param, layer.params[name].ravel().copy(), layer.grads[name].ravel())
    return worst


# ---------------------------------------------------------------------------
# conv1d


class TestConv1D:
    def test_known_small_case(self):
        conv = nncore.Conv1D(1, 1, 2, rng=np.random.default_rng(0))
        conv.params["w"][...] = np.array([[[1.0, -1.0]]])   # difference filter
        conv.params["b"][...] = 0.0
        x = np.array([[[1.0], [3.0], [2.0], [5.0]]])
        out = conv.forward(x)
        np.testing.assert_allclose(out[0, :, 0], [-2.0, 1.0, -3.0])

    def test_output_length_and_stride(self):
        conv = nncore.Conv1D(2, 3, 3, stride=2, rng=np.random.default_rng(0))
        assert conv.out_length(7) == 3
        out = conv.forward(np.zeros((4, 7, 2)))
        assert out.shape == (4, 3, 3)

    def test_too_short_input_raises(self):
        conv = nncore.Conv1D(1, 1, 3, rng=np.random.default_rng(0))
        with pytest.raises(ShapeError):
            conv.forward(np.zeros((1, 2, 1)))

    @pytest.mark.parametrize("seed", range(6))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        t = int(rng.integers(k, k + 5))
        b = int(rng.integers(1, 4))
        worst = check_layer_gradients(
            lambda r: nncore.Conv1D(c_in, c_out, k, stride=stride, rng=r),
            (b, t, c_in), seed)
        assert max(worst.values()) < TOL, worst


# ---------------------------------------------------------------------------
# maxpool1d


class TestMaxPool1D:
    def test_known_small_case(self):
        pool = nncore.MaxPool1D(2, stride=2)
        x = np.array([[[1.0], [3.0], [2.0], [5.0]]])
        np.testing.assert_array_equal(pool.forward(x)[0, :, 0], [3.0, 5.0])

    def test_routing_sends_gradient_to_first_argmax(self):
        pool = nncore.MaxPool1D(2, stride=2)
        x = np.array([[[2.0], [2.0], [1.0], [5.0]]])     # tie in first window
        pool.forward(x)
        dx = pool.backward(np.ones((1, 2, 1)))
        np.testing.assert_array_equal(dx[0, :, 0], [1.0, 0.0, 0.0, 1.0])

    @pytest.mark.parametrize("seed", range(6))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        width = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        t = int(rng.integers(width, width + 6))
        shape = (int(rng.integers(1, 4)), t, int(rng.integers(1, 4)))
        worst = check_layer_gradients(lambda r: nncore.MaxPool1D(width, stride),
                                      shape, seed + 100)
        assert max(worst.values()) < TOL, worst


# ---------------------------------------------------------------------------
# relu / dropout


class TestReLU:
    def test_clamps_negatives(self):
        relu = nncore.ReLU()
        np.testing.assert_array_equal(
            relu.forward(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_identity_on_nonnegative(self):
        relu = nncore.ReLU()
        x = np.abs(np.random.default_rng(0).normal(size=(3, 4)))
        np.testing.assert_array_equal(relu.forward(x), x)

    def test_subgradient_zero_at_zero(self):
        relu = nncore.ReLU()
        relu.forward(np.array([0.0, -1.0, 1.0]))
        np.testing.assert_array_equal(relu.backward(np.ones(3)), [0.0, 0.0, 1.0])

    @pytest.mark.parametrize("seed", range(4))
    def test_gradients_away_from_zero(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 5))
        x[np.abs(x) < 0.05] = 0.1      # keep FD clear of the kink
        relu = nncore.ReLU()
        R = rng.normal(size=x.shape)
        relu.forward(x.copy())
        dx = relu.backward(R.copy())
        err = nncore.grad_check(
            lambda flat: float((relu.forward(flat.reshape(x.shape)) * R).sum()),
            x.ravel().copy(), dx.ravel())
        assert err < TOL


class TestDropout:
    def test_rate_zero_is_identity_in_both_modes(self):
        drop = nncore.Dropout(0.0)
        x = np.random.default_rng(0).normal(size=(4, 6))
        np.testing.assert_array_equal(drop.forward(x, train=True), x)
        np.testing.assert_array_equal(drop.forward(x, train=False), x)

    def test_infer_mode_is_identity_at_any_rate(self):
        drop = nncore.Dropout(0.7)
        x = np.random.default_rng(1).normal(size=(4, 6))
        np.testing.assert_array_equal(drop.forward(x, train=False), x)

    def test_survivors_scaled_by_keep_probability(self):
        drop = nncore.Dropout(0.25, rng=np.random.default_rng(3))
        x = np.ones((10, 10))
        out = drop.forward(x, train=True)
        survivors = out[out != 0]
        np.testing.assert_allclose(survivors, 1.0 / 0.75)

    def test_zeroed_fraction_matches_rate_within_3_sigma(self):
        rate = 0.3
        n = 100_000
        drop = nncore.Dropout(rate, rng=np.random.default_rng(11))
        out = drop.forward(np.ones(n), train=True)
        zeroed = (out == 0).sum()
        sigma = (n * rate * (1 - rate)) ** 0.5
        assert abs(zeroed - n * rate) < 3 * sigma

    def test_backward_reuses_the_forward_mask(self):
        drop = nncore.Dropout(0.5, rng=np.random.default_rng(5))
        x = np.ones((200,))
        out = drop.forward(x, train=True)
        grad = drop.backward(np.ones(200))
        np.testing.assert_array_equal(grad, out)

    def test_invalid_rate_rejected(self):
        with pytest.raises(ParameterError):
            nncore.Dropout(1.0)
        with pytest.raises(ParameterError):
            nncore.Dropout(-0.1)


# ---------------------------------------------------------------------------
# dense


class TestDense:
    def test_affine_map(self):
        dense = nncore.Dense(2, 2, rng=np.random.default_rng(0))
        dense.params["w"][...] = np.array([[1.0, 2.0], [3.0, 4.0]])
        dense.params["b"][...] = np.array([10.0, 20.0])
        out = dense.forward(np.array([[1.0, 1.0]]))
        np.testing.assert_array_equal(out, [[14.0, 26.0]])

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 6)))
        out_dim = int(rng.integers(1, 6))
        worst = check_layer_gradients(
            lambda r: nncore.Dense(shape[1], out_dim, rng=r), shape, seed + 200)
        assert max(worst.values()) < TOL, worst

    def test_glorot_bounds(self):
        dense = nncore.Dense(30, 50, rng=np.random.default_rng(0))
        limit = (6.0 / (30 + 50)) ** 0.5
        assert np.all(np.abs(dense.params["w"]) <= limit)
        np.testing.assert_array_equal(dense.params["b"], np.zeros(50))


# ---------------------------------------------------------------------------
# lstm


def scalar_lstm_step(x, h_prev, c_prev, wxi, wxf, wxg, wxo, whi, whf, whg, who,
                     bi, bf, bg, bo):
    """Independent H=1 reference: the gate equations written out one by one."""
    import math

    def sig(z):
        return 1.0 / (1.0 + math.exp(-z))

    i = sig(x * wxi + h_prev * whi + bi)
    f = sig(x * wxf + h_prev * whf + bf)
    g = math.tanh(x * wxg + h_prev * whg + bg)
    o = sig(x * wxo + h_prev * who + bo)
    c = f * c_prev + i * g
    h = o * math.tanh(c)
    return h, c


class TestLSTM:
    def test_single_step_matches_scalar_reference(self):
        lstm = nncore.LSTM(1, 1, return_sequences=True, rng=np.random.default_rng(0))
        wxi, wxf, wxg, wxo = 0.3, -0.2, 0.5, 0.1
        whi, whf, whg, who = 0.7, 0.4, -0.6, 0.2
        bi, bf, bg, bo = 0.05, 1.0, -0.1, 0.3
        lstm.params["wx"][...] = np.array([[wxi, wxf, wxg, wxo]])
        lstm.params["wh"][...] = np.array([[whi, whf, whg, who]])
        lstm.params["b"][...] = np.array([bi, bf, bg, bo])
        x = 0.8
        out = lstm.forward(np.array([[[x]]]))
        h_ref, _ = scalar_lstm_step(x, 0.0, 0.0, wxi, wxf, wxg, wxo,
                                    whi, whf, whg, who, bi, bf, bg, bo)
        assert out[0, 0, 0] == pytest.approx(h_ref, abs=1e-12)

    def test_two_steps_match_chained_scalar_reference(self):
        lstm = nncore.LSTM(1, 1, return_sequences=True, rng=np.random.default_rng(0))
        w = {k: float(v) for k, v in zip(
            "wxi wxf wxg wxo".split(), lstm.params["wx"][0])}
        w.update({k: float(v) for k, v in zip(
            "whi whf whg who".split(), lstm.params["wh"][0])})
        w.update({k: float(v) for k, v in zip(
            "bi bf bg bo".split(), lstm.params["b"])})
        xs = [0.5, -1.2]
        out = lstm.forward(np.array([[[xs[0]], [xs[1]]]]))
        h, c = 0.0, 0.0
        for t, x in enumerate(xs):
            h, c = scalar_lstm_step(x, h, c, w["wxi"], w["wxf"], w["wxg"], w["wxo"],
                                    w["whi"], w["whf"], w["whg"], w["who"],
                                    w["bi"], w["bf"], w["bg"], w["bo"])
            assert out[0, t, 0] == pytest.approx(h, abs=1e-12)

    def test_forget_bias_initialized_to_one(self):
        lstm = nncore.LSTM(3, 4, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(lstm.params["b"][4:8], np.ones(4))
        assert np.all(lstm.params["b"][:4] == 0)
        assert np.all(lstm.params["b"][8:] == 0)

    def test_last_step_mode_shape(self):
        lstm = nncore.LSTM(2, 5, return_sequences=False, rng=np.random.default_rng(0))
        out = lstm.forward(np.zeros((3, 4, 2)))
        assert out.shape == (3, 5)

    @pytest.mark.parametrize("seed", range(4))
    def test_gradients_sequence_mode(self, seed):
        rng = np.random.default_rng(seed)
        f, h = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 5)), f)
        worst = check_layer_gradients(
            lambda r: nncore.LSTM(f, h, return_sequences=True, rng=r),
            shape, seed + 300)
        assert max(worst.values()) < TOL, worst

    @pytest.mark.parametrize("seed", range(4))
    def test_gradients_last_step_mode(self, seed):
        # small instance: 4 steps, hidden 3
        shape = (2, 4, 2)
        worst = check_layer_gradients(
            lambda r: nncore.LSTM(2, 3, return_sequences=False, rng=r),
            shape, seed + 400)
        assert max(worst.values()) < TOL, worst


# ---------------------------------------------------------------------------
# softmax / cross-entropy


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_give_uniform_distribution(self):
        out = nncore.softmax(np.zeros((1, 4)))
        np.testing.assert_allclose(out, np.full((1, 4), 0.25))

    def test_rows_sum_to_one(self):
        logits = np.random.default_rng(0).normal(size=(6, 5)) * 10
        out = nncore.softmax(logits)
        np.testing.assert_allclose(out.sum(axis=1), np.ones(6), atol=1e-12)

    def test_shift_invariance(self):
        logits = np.random.default_rng(1).normal(size=(3, 4))
        np.testing.assert_allclose(
            nncore.softmax(logits), nncore.softmax(logits + 1000.0), atol=1e-12)

    def test_perfect_prediction_loss_near_zero(self):
        probs = np.array([[1.0, 0.0, 0.0]])
        targets = np.array([[1.0, 0.0, 0.0]])
        loss, _ = nncore.cross_entropy(probs, targets)
        # the log epsilon leaves a residual of about -1e-12
        assert abs(loss) < 1e-11

    def test_known_loss_value(self):
        probs = np.array([[0.5, 0.5]])
        targets = np.array([[1.0, 0.0]])
        loss, _ = nncore.cross_entropy(probs, targets)
        assert loss == pytest.approx(np.log(2.0), abs=1e-9)

    def test_fused_gradient_matches_fd_through_softmax(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(4, 5))
        targets = np.zeros((4, 5))
        targets[np.arange(4), rng.integers(0, 5, size=4)] = 1.0

        def loss_of(flat):
            p = nncore.softmax(flat.reshape(4, 5))
            return nncore.cross_entropy(p, targets)[0]

        probs = nncore.softmax(logits)
        _, dlogits = nncore.cross_entropy(probs, targets)
        err = nncore.grad_check(loss_of, logits.ravel().copy(), dlogits.ravel())
        assert err < TOL

    def test_softmax_layer_backward_matches_fd(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(3, 4))
        R = rng.normal(size=(3, 4))
        layer = nncore.Softmax()

        def weighted(flat):
            return float((layer.forward(flat.reshape(3, 4)) * R).sum())

        layer.forward(logits.copy())
        dx = layer.backward(R.copy())
        err = nncore.grad_check(weighted, logits.ravel().copy(), dx.ravel())
        assert err < TOL

    def test_malformed_targets_rejected(self):
        from flowsentry.errors import InputError

        probs = np.full((2, 2), 0.5)
        with pytest.raises(InputError):
            nncore.cross_entropy(probs, np.array([[0.5, 0.5], [1.0, 0.0]]))


# ---------------------------------------------------------------------------
# adam


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = {"w": np.array([1.0, -2.0])}
        opt = nncore.Adam(p, lr=0.1)
        opt.step({"w": np.zeros(2)})
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_three_steps_shrink_quadratic(self):
        # minimize theta^2; gradient 2*theta
        p = {"t": np.array([1.0])}
        opt = nncore.Adam(p, lr=0.1)
        seen = [1.0]
        for _ in range(3):
            opt.step({"t": 2.0 * p["t"]})
            seen.append(abs(float(p["t"][0])))
        assert seen[1] < seen[0] and seen[2] < seen[1] and seen[3] < seen[2]

    def test_first_step_size_is_learning_rate(self):
        # bias correction makes the first update exactly lr * sign(grad)
        p = {"t": np.array([0.0])}
        opt = nncore.Adam(p, lr=0.05)
        opt.step({"t": np.array([3.0])})
        assert p["t"][0] == pytest.approx(-0.05, rel=1e-6)

    def test_shape_mismatch_rejected(self):
        opt = nncore.Adam({"w": np.zeros(3)})
        with pytest.raises(ShapeError):
            opt.step({"w": np.zeros(4)})

    def test_state_mirrors_parameter_shapes(self):
        p = {"a": np.zeros((2, 3)), "b": np.zeros(4)}
        opt = nncore.Adam(p)
        opt.step({"a": np.ones((2, 3)), "b": np.ones(4)})
        assert opt.m["a"].shape == (2, 3) and opt.v["b"].shape == (4,)


# ---------------------------------------------------------------------------
# initialization


def test_glorot_uniform_bounds_and_determinism():
    limit = (6.0 / (20 + 30)) ** 0.5
    a = nncore.glorot_uniform((20, 30), 20, 30, np.random.default_rng(5))
    b = nncore.glorot_uniform((20, 30), 20, 30, np.random.default_rng(5))
    assert np.all(np.abs(a) <= limit)
    np.testing.assert_array_equal(a, b)
