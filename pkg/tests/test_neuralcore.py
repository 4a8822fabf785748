import numpy as np
import pytest

from ohlcast.errors import ConfigError
from ohlcast.nn import (
    Activation,
    AdamState,
    DenseLayer,
    LstmState,
    dense_backward,
    dense_forward,
    finite_difference_gradient,
    glorot_init,
    init_dense,
    init_lstm_cell,
    lstm_batch_backward,
    lstm_batch_forward,
    lstm_cell_step,
    lstm_sequence_forward,
    mse_loss,
    optimizer_step,
    sigmoid,
)
from ohlcast.nn.gradcheck import max_relative_error

RNG = np.random.default_rng(1234)


def small_dense(activation, out_dim=2, in_dim=3, seed=7):
    rng = np.random.default_rng(seed)
    return DenseLayer(
        weights=rng.normal(size=(out_dim, in_dim)),
        bias=rng.normal(size=out_dim),
        activation=activation,
    )


class TestSigmoid:
    def test_matches_definition(self):
        x = np.linspace(-30.0, 30.0, 101)
        assert np.allclose(sigmoid(x), 1.0 / (1.0 + np.exp(-x)), atol=1e-15)

    def test_extreme_inputs_stay_finite(self):
        assert sigmoid(-1000.0) == 0.0
        assert sigmoid(1000.0) == 1.0

    def test_midpoint(self):
        assert sigmoid(0.0) == 0.5


class TestDense:
    def test_forward_identity(self):
        layer = small_dense(Activation.IDENTITY)
        x = np.array([1.0, -2.0, 0.5])
        assert np.allclose(dense_forward(layer, x), layer.weights @ x + layer.bias)

    @pytest.mark.parametrize(
        "activation,fn",
        [
            (Activation.SIGMOID, lambda z: 1.0 / (1.0 + np.exp(-z))),
            (Activation.TANH, np.tanh),
        ],
    )
    def test_forward_activations(self, activation, fn):
        layer = small_dense(activation)
        x = np.array([0.3, -0.1, 0.7])
        assert np.allclose(dense_forward(layer, x), fn(layer.weights @ x + layer.bias))

    def test_batch_matches_single(self):
        layer = small_dense(Activation.SIGMOID)
        xs = RNG.normal(size=(5, 3))
        batched = dense_forward(layer, xs)
        for b in range(5):
            assert np.allclose(batched[b], dense_forward(layer, xs[b]), atol=1e-15)

    def test_wrong_input_size(self):
        layer = small_dense(Activation.IDENTITY)
        with pytest.raises(ConfigError):
            dense_forward(layer, np.zeros(4))

    @pytest.mark.parametrize(
        "activation", [Activation.IDENTITY, Activation.SIGMOID, Activation.TANH]
    )
    def test_backward_against_finite_differences(self, activation):
        layer = small_dense(activation)
        x = RNG.normal(size=(4, 3))
        r = RNG.normal(size=(4, 2))

        def loss():
            return float(np.sum(r * dense_forward(layer, x)))

        y = dense_forward(layer, x)
        dw, db, dx = dense_backward(layer, x, y, r)
        numeric = finite_difference_gradient(
            loss, {"w": layer.weights, "b": layer.bias, "x": x}, step=1e-6
        )
        assert max_relative_error({"w": dw, "b": db, "x": dx}, numeric) < 1e-6

    def test_backward_single_vector_shape(self):
        layer = small_dense(Activation.IDENTITY)
        x = np.array([1.0, 2.0, 3.0])
        y = dense_forward(layer, x)
        _, _, dx = dense_backward(layer, x, y, np.ones(2))
        assert dx.shape == (3,)

    def test_validation(self):
        with pytest.raises(ConfigError):
            DenseLayer(weights=np.zeros(3), bias=np.zeros(3))
        with pytest.raises(ConfigError):
            DenseLayer(weights=np.zeros((2, 3)), bias=np.zeros(5))


class TestInit:
    def test_glorot_bound(self):
        w = glorot_init((40, 60), seed=3)
        bound = np.sqrt(6.0 / 100.0)
        assert np.all(np.abs(w) <= bound)
        assert w.std() > 0.1 * bound

    def test_glorot_deterministic(self):
        assert np.array_equal(glorot_init((4, 4), seed=9), glorot_init((4, 4), seed=9))
        assert not np.array_equal(glorot_init((4, 4), seed=9), glorot_init((4, 4), seed=10))

    def test_glorot_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            glorot_init((0, 3), seed=1)

    def test_init_dense_zero_bias(self):
        layer = init_dense(4, 6, Activation.SIGMOID, np.random.default_rng(0))
        assert np.all(layer.bias == 0.0)
        assert layer.out_dim == 4 and layer.in_dim == 6

    def test_init_lstm_forget_bias(self):
        cell = init_lstm_cell(5, 3, np.random.default_rng(0))
        assert np.all(cell.b_f == 1.0)
        assert np.all(cell.b_i == 0.0)
        assert np.all(cell.b_c == 0.0)
        assert np.all(cell.b_o == 0.0)
        assert cell.w_f.shape == (5, 8)
        assert cell.hidden_size == 5 and cell.input_size == 3


def naive_lstm_step(cell, h_prev, c_prev, x):
    """Textbook gate equations written independently of the library code."""
    n = cell.hidden_size

    def gate(w, b, squash):
        return squash(w[:, :n] @ h_prev + w[:, n:] @ x + b)

    def logistic(z):
        return 1.0 / (1.0 + np.exp(-z))

    f = gate(cell.w_f, cell.b_f, logistic)
    i = gate(cell.w_i, cell.b_i, logistic)
    g = gate(cell.w_c, cell.b_c, np.tanh)
    o = gate(cell.w_o, cell.b_o, logistic)
    c = f * c_prev + i * g
    return o * np.tanh(c), c


class TestLstmCell:
    def test_step_matches_naive_oracle(self):
        cell = init_lstm_cell(4, 3, np.random.default_rng(2))
        state = LstmState(h=RNG.normal(size=4) * 0.5, c=RNG.normal(size=4) * 0.5)
        x = RNG.normal(size=3)
        nxt = lstm_cell_step(cell, state, x)
        h_ref, c_ref = naive_lstm_step(cell, state.h, state.c, x)
        assert np.allclose(nxt.h, h_ref, atol=1e-12)
        assert np.allclose(nxt.c, c_ref, atol=1e-12)

    def test_step_input_validation(self):
        cell = init_lstm_cell(4, 3, np.random.default_rng(2))
        with pytest.raises(ConfigError):
            lstm_cell_step(cell, LstmState.zeros(4), np.zeros(5))
        with pytest.raises(ConfigError):
            lstm_cell_step(cell, LstmState.zeros(3), np.zeros(3))

    def test_sequence_forward_folds_steps(self):
        cell = init_lstm_cell(3, 2, np.random.default_rng(5))
        xs = RNG.normal(size=(6, 2))
        states = lstm_sequence_forward(cell, xs)
        assert len(states) == 6
        manual = LstmState.zeros(3)
        for t, x in enumerate(xs):
            manual = lstm_cell_step(cell, manual, x)
            assert np.allclose(states[t].h, manual.h, atol=1e-15)

    def test_sequence_rejects_empty(self):
        cell = init_lstm_cell(3, 2, np.random.default_rng(5))
        with pytest.raises(ValueError):
            lstm_sequence_forward(cell, [])

    def test_hidden_state_bounded(self):
        cell = init_lstm_cell(4, 2, np.random.default_rng(8))
        xs = RNG.normal(size=(50, 2)) * 5.0
        states = lstm_sequence_forward(cell, xs)
        hs = np.array([s.h for s in states])
        assert np.all(np.abs(hs) < 1.0)

    def test_stacked_layout(self):
        cell = init_lstm_cell(2, 3, np.random.default_rng(1))
        w, b = cell.stacked()
        assert w.shape == (8, 5)
        assert np.array_equal(w[:2], cell.w_f)
        assert np.array_equal(w[6:], cell.w_o)
        assert np.array_equal(b[:2], cell.b_f)

    def test_param_validation(self):
        rng = np.random.default_rng(0)
        good = init_lstm_cell(3, 2, rng)
        with pytest.raises(ConfigError):
            good.__class__(
                w_f=good.w_f, w_i=good.w_i[:2], w_c=good.w_c, w_o=good.w_o,
                b_f=good.b_f, b_i=good.b_i, b_c=good.b_c, b_o=good.b_o,
            )


class TestLstmBatch:
    def test_matches_single_path(self):
        cell = init_lstm_cell(4, 3, np.random.default_rng(11))
        seq = RNG.normal(size=(7, 5, 3))
        hs, _ = lstm_batch_forward(cell, seq)
        assert hs.shape == (7, 5, 4)
        for b in range(5):
            states = lstm_sequence_forward(cell, seq[:, b])
            for t in range(7):
                assert np.allclose(hs[t, b], states[t].h, atol=1e-12)

    def test_shape_validation(self):
        cell = init_lstm_cell(4, 3, np.random.default_rng(11))
        with pytest.raises(ConfigError):
            lstm_batch_forward(cell, np.zeros((7, 3)))
        with pytest.raises(ConfigError):
            lstm_batch_forward(cell, np.zeros((7, 5, 2)))

    def test_backward_against_finite_differences(self):
        cell = init_lstm_cell(3, 2, np.random.default_rng(13))
        seq = RNG.normal(size=(4, 3, 2))
        r = RNG.normal(size=(4, 3, 3))

        def loss():
            hs, _ = lstm_batch_forward(cell, seq)
            return float(np.sum(r * hs))

        _, cache = lstm_batch_forward(cell, seq)
        grads, d_seq, _, _ = lstm_batch_backward(cell, cache, r)
        params = {name: getattr(cell, name) for name in
                  ("w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o")}
        numeric = finite_difference_gradient(loss, params, step=1e-6)
        assert max_relative_error(grads, numeric) < 5e-6
        numeric_seq = finite_difference_gradient(loss, {"seq": seq}, step=1e-6)
        assert max_relative_error(d_seq, numeric_seq["seq"]) < 5e-6

    def test_backward_last_step_only_signal(self):
        """Zero upstream rows before the last step still backpropagate correctly."""
        cell = init_lstm_cell(3, 2, np.random.default_rng(17))
        seq = RNG.normal(size=(5, 2, 2))
        r = np.zeros((5, 2, 3))
        r[-1] = RNG.normal(size=(2, 3))

        def loss():
            hs, _ = lstm_batch_forward(cell, seq)
            return float(np.sum(r[-1] * hs[-1]))

        _, cache = lstm_batch_forward(cell, seq)
        grads, _, _, _ = lstm_batch_backward(cell, cache, r)
        params = {"w_c": cell.w_c, "b_o": cell.b_o}
        numeric = finite_difference_gradient(loss, params, step=1e-6)
        assert max_relative_error({k: grads[k] for k in params}, numeric) < 1e-6


class TestMseLoss:
    def test_value(self):
        assert mse_loss([1.0, 2.0], [0.0, 4.0]) == pytest.approx(2.5)

    def test_zero_for_equal(self):
        assert mse_loss([3.0, 3.0], [3.0, 3.0]) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss([1.0], [1.0, 2.0])

    def test_empty(self):
        with pytest.raises(ValueError):
            mse_loss([], [])


def reference_adam(params, grad_seq, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook update with explicit bias-corrected moments."""
    p = {k: v.copy() for k, v in params.items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(vv) for k, vv in params.items()}
    for t, grads in enumerate(grad_seq, start=1):
        for k, g in grads.items():
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            m_hat = m[k] / (1 - b1**t)
            v_hat = v[k] / (1 - b2**t)
            p[k] = p[k] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p


class TestAdam:
    def test_matches_reference_updates(self):
        rng = np.random.default_rng(99)
        params = {"a": rng.normal(size=4), "b": rng.normal(size=(2, 3))}
        grad_seq = [
            {"a": rng.normal(size=4), "b": rng.normal(size=(2, 3))} for _ in range(5)
        ]
        expected = reference_adam(params, grad_seq)

        state = AdamState()
        live = {k: v.copy() for k, v in params.items()}
        for grads in grad_seq:
            optimizer_step(state, live, grads)
        assert state.step == 5
        for k in params:
            assert np.allclose(live[k], expected[k], atol=1e-8)

    def test_updates_in_place(self):
        p = {"w": np.array([1.0, 1.0])}
        arr = p["w"]
        optimizer_step(AdamState(), p, {"w": np.array([1.0, -1.0])})
        assert p["w"] is arr
        assert arr[0] != 1.0

    def test_converges_on_quadratic(self):
        target = np.array([2.0, -1.0, 0.5])
        p = {"x": np.zeros(3)}
        state = AdamState(learning_rate=0.1)
        for _ in range(300):
            optimizer_step(state, p, {"x": 2.0 * (p["x"] - target)})
        assert np.max(np.abs(p["x"] - target)) < 1e-2

    def test_unknown_gradient_key(self):
        with pytest.raises(ConfigError):
            optimizer_step(AdamState(), {"a": np.zeros(2)}, {"zz": np.zeros(2)})

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            optimizer_step(AdamState(), {"a": np.zeros(2)}, {"a": np.zeros(3)})

    def test_partial_gradients_leave_rest_untouched(self):
        p = {"a": np.ones(2), "b": np.ones(2)}
        optimizer_step(AdamState(), p, {"a": np.ones(2)})
        assert np.all(p["b"] == 1.0)
        assert np.all(p["a"] != 1.0)


class TestGradcheckHelpers:
    def test_quadratic_gradient(self):
        p = {"x": np.array([1.0, -2.0, 3.0])}
        c = np.array([2.0, 0.5, -1.0])

        def loss():
            return float(np.sum(c * p["x"] ** 2))

        numeric = finite_difference_gradient(loss, p, step=1e-6)
        assert np.allclose(numeric["x"], 2.0 * c * p["x"], atol=1e-8)

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            finite_difference_gradient(lambda: 0.0, {"x": np.zeros(1)}, step=0.0)

    def test_restores_parameters(self):
        p = {"x": np.array([1.0, 2.0])}
        before = p["x"].copy()
        finite_difference_gradient(lambda: float(p["x"].sum()), p, step=1e-5)
        assert np.array_equal(p["x"], before)

    def test_max_relative_error_zero_for_identical(self):
        a = np.array([1.0, 2.0])
        assert max_relative_error(a, a.copy()) == 0.0

    def test_max_relative_error_value(self):
        assert max_relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)

    def test_max_relative_error_floor_damps_noise(self):
        # Both entries far below the floor: the difference is divided by the floor.
        err = max_relative_error(np.array([1e-9]), np.array([3e-9]), floor=1e-6)
        assert err == pytest.approx(2e-3)
