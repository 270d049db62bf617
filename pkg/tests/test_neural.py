import numpy as np
import pytest

from caae.errors import DataError
from caae.neural import (
    Layer,
    LossSpec,
    NetworkParams,
    Sgd,
    backward,
    backward_from_output,
    forward,
    grad_reverse,
    init_network,
    init_velocity,
    loss_value,
    network_from_bytes,
    network_to_bytes,
    sgd_step,
)


def numerical_param_grads(params, compute_loss, step=1e-5):
    """Central finite differences over every parameter (oracle path)."""
    grads = []
    for layer in params.layers:
        layer_grads = []
        for arr in (layer.weights, layer.biases):
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + step
                up = compute_loss()
                arr[idx] = old - step
                down = compute_loss()
                arr[idx] = old
                g[idx] = (up - down) / (2 * step)
            layer_grads.append(g)
        grads.append(layer_grads)
    return grads


def max_relative_error(analytic, numerical):
    worst = 0.0
    for a_layer, n_layer in zip(analytic, numerical):
        for a, n in [(a_layer.weights, n_layer[0]), (a_layer.biases, n_layer[1])]:
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


class TestForward:
    def test_identity_layer_passthrough(self):
        params = NetworkParams([Layer(np.eye(4), np.zeros(4), "identity")])
        x = np.array([1.0, -2.0, 3.5, 0.0])
        np.testing.assert_array_equal(forward(params, x).output[0], x)

    def test_softmax_equal_logits_uniform(self):
        params = NetworkParams([Layer(np.zeros((5, 3)), np.ones(5), "softmax")])
        out = forward(params, np.array([0.3, -0.1, 2.0])).output
        np.testing.assert_allclose(out, 0.2)

    def test_deterministic_init_and_forward(self):
        a = init_network([6, 4, 2], ["relu", "softmax"], seed=3)
        b = init_network([6, 4, 2], ["relu", "softmax"], seed=3)
        x = np.linspace(-1, 1, 6)
        np.testing.assert_array_equal(forward(a, x).output, forward(b, x).output)

    def test_batch_and_single_agree(self):
        # BLAS may order the reductions differently for gemm vs gemv, so the
        # agreement is near-exact rather than bitwise.
        params = init_network([3, 5, 2], ["tanh", "identity"], seed=1)
        x = np.random.default_rng(0).normal(size=(4, 3))
        batch = forward(params, x).output
        singles = np.vstack([forward(params, row).output for row in x])
        np.testing.assert_allclose(batch, singles, rtol=1e-12, atol=1e-14)

    def test_shape_mismatch_rejected(self):
        params = init_network([3, 2], ["identity"], seed=0)
        with pytest.raises(DataError):
            forward(params, np.zeros(4))

    def test_glorot_bound(self):
        params = init_network([100, 50], ["identity"], seed=7)
        bound = np.sqrt(6.0 / 150)
        w = params.layers[0].weights
        assert np.all(np.abs(w) <= bound)
        assert np.max(np.abs(w)) > 0.8 * bound  # actually fills the range

    def test_softmax_mid_stack_rejected(self):
        with pytest.raises(DataError):
            init_network([3, 4, 2], ["softmax", "identity"], seed=0)


class TestBackward:
    def test_mse_at_minimum_zero_grads(self):
        params = init_network([3, 4, 2], ["tanh", "identity"], seed=5)
        x = np.random.default_rng(1).normal(size=(6, 3))
        cache = forward(params, x)
        grads, dinput = backward(params, cache, LossSpec("mse"), cache.output.copy())
        for g in grads:
            np.testing.assert_array_equal(g.weights, 0.0)
            np.testing.assert_array_equal(g.biases, 0.0)
        np.testing.assert_array_equal(dinput, 0.0)

    def test_cross_entropy_softmax_closed_form(self):
        # seed gradient at the logits is (p - onehot)/N
        params = init_network([4, 3], ["softmax"], seed=2)
        x = np.random.default_rng(3).normal(size=(5, 4))
        labels = np.array([0, 2, 1, 1, 0])
        cache = forward(params, x)
        grads, _ = backward(params, cache, LossSpec("cross_entropy"), labels)
        p = cache.output
        onehot = np.zeros_like(p)
        onehot[np.arange(5), labels] = 1.0
        dz = (p - onehot) / 5
        np.testing.assert_allclose(grads[0].weights, dz.T @ x, atol=1e-12)
        np.testing.assert_allclose(grads[0].biases, dz.sum(axis=0), atol=1e-12)

    @pytest.mark.parametrize("trial", range(20))
    def test_finite_differences_random_nets(self, trial):
        rng = np.random.default_rng(100 + trial)
        depth = int(rng.integers(2, 4))
        sizes = [int(rng.integers(2, 9)) for _ in range(depth + 1)]
        loss_kind = ["mse", "cross_entropy"][trial % 2]
        hidden = [str(rng.choice(["relu", "tanh", "identity"])) for _ in range(depth - 1)]
        head = "softmax" if loss_kind == "cross_entropy" else str(rng.choice(["tanh", "identity"]))
        params = init_network(sizes, hidden + [head], seed=int(rng.integers(0, 1000)))
        x = rng.normal(size=(4, sizes[0]))
        if loss_kind == "mse":
            target = rng.normal(size=(4, sizes[-1]))
        else:
            target = rng.integers(0, sizes[-1], size=4)
        spec = LossSpec(loss_kind, weight=float(rng.uniform(0.5, 2.0)))

        cache = forward(params, x)
        analytic, _ = backward(params, cache, spec, target)
        numerical = numerical_param_grads(
            params, lambda: loss_value(spec, forward(params, x).output, target)
        )
        assert max_relative_error(analytic, numerical) < 1e-4

    def test_logits_head_cross_entropy(self):
        params = init_network([3, 4], ["identity"], seed=9)
        x = np.random.default_rng(4).normal(size=(6, 3))
        labels = np.random.default_rng(5).integers(0, 4, size=6)
        spec = LossSpec("cross_entropy")
        cache = forward(params, x)
        analytic, _ = backward(params, cache, spec, labels)

        def compute():
            logits = forward(params, x).output
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            return float(-np.mean(np.log(p[np.arange(6), labels])))

        numerical = numerical_param_grads(params, compute)
        assert max_relative_error(analytic, numerical) < 1e-4

    def test_dinput_matches_finite_difference(self):
        params = init_network([4, 5, 3], ["tanh", "identity"], seed=11)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(1, 4))
        target = rng.normal(size=(1, 3))
        spec = LossSpec("mse")
        cache = forward(params, x)
        _, dinput = backward(params, cache, spec, target)
        step = 1e-6
        for j in range(4):
            xp, xm = x.copy(), x.copy()
            xp[0, j] += step
            xm[0, j] -= step
            num = (
                loss_value(spec, forward(params, xp).output, target)
                - loss_value(spec, forward(params, xm).output, target)
            ) / (2 * step)
            assert dinput[0, j] == pytest.approx(num, rel=1e-5, abs=1e-8)


class TestGradReverse:
    def test_lambda_zero(self):
        g = np.array([1.0, -2.0])
        np.testing.assert_array_equal(grad_reverse(g, 0.0), np.zeros(2))

    def test_lambda_one_is_negation(self):
        g = np.array([[0.5, -3.0]])
        np.testing.assert_array_equal(grad_reverse(g, 1.0), -g)

    def test_composite_objective_gradient(self):
        # J = w_rec * MSE(dec(enc(x)), x) - w_id * CE(head(enc(x)), u):
        # assembled encoder gradients must match finite differences of J.
        rng = np.random.default_rng(21)
        enc = init_network([5, 6, 4], ["tanh", "identity"], seed=1)
        dec = init_network([4, 6, 5], ["tanh", "identity"], seed=2)
        head = init_network([4, 3], ["softmax"], seed=3)
        x = rng.normal(size=(6, 5))
        u = rng.integers(0, 3, size=6)
        w_rec, w_id = 0.7, 1.3

        def objective():
            z = forward(enc, x).output
            rec = loss_value(LossSpec("mse", w_rec), forward(dec, z).output, x)
            ce = loss_value(LossSpec("cross_entropy"), forward(head, z).output, u)
            return rec - w_id * ce

        enc_cache = forward(enc, x)
        z = enc_cache.output
        dec_cache = forward(dec, z)
        head_cache = forward(head, z)
        _, dz_rec = backward(dec, dec_cache, LossSpec("mse", w_rec), x)
        _, dz_id = backward(head, head_cache, LossSpec("cross_entropy"), u)
        analytic, _ = backward_from_output(enc, enc_cache, dz_rec + grad_reverse(dz_id, w_id))

        numerical = numerical_param_grads(enc, objective)
        assert max_relative_error(analytic, numerical) < 1e-4


class TestSgd:
    def test_zero_gradients_noop(self):
        params = init_network([2, 2], ["identity"], seed=0)
        before = params.layers[0].weights.copy()
        grads, _ = backward(
            params, forward(params, np.zeros((1, 2))), LossSpec("mse"), np.zeros((1, 2))
        )
        sgd_step(params, grads, lr=0.5)
        np.testing.assert_array_equal(params.layers[0].weights, before)

    def test_lr_zero_noop(self):
        params = init_network([2, 3], ["identity"], seed=1)
        before = params.layers[0].weights.copy()
        x = np.ones((1, 2))
        grads, _ = backward(params, forward(params, x), LossSpec("mse"), np.full((1, 3), 2.0))
        sgd_step(params, grads, lr=0.0)
        np.testing.assert_array_equal(params.layers[0].weights, before)

    def test_quadratic_convergence(self):
        # One weight, fixed input 1, no-bias equivalent: loss (w - 3)^2.
        params = NetworkParams([Layer(np.zeros((1, 1)), np.zeros(1), "identity")])
        x = np.array([[1.0]])
        target = np.array([[3.0]])
        for _ in range(100):
            cache = forward(params, x)
            grads, _ = backward(params, cache, LossSpec("mse"), target)
            grads[0].biases[:] = 0.0  # keep it a pure 1-D problem in w
            sgd_step(params, grads, lr=0.1)
        w = params.layers[0].weights[0, 0]
        # oracle: w_k = 3 - 3*(1 - 0.2)^k
        assert w == pytest.approx(3 - 3 * 0.8**100, abs=1e-12)
        assert abs(w - 3) < 1e-3

    def test_momentum_requires_velocity(self):
        params = init_network([2, 2], ["identity"], seed=0)
        grads, _ = backward(
            params, forward(params, np.ones((1, 2))), LossSpec("mse"), np.zeros((1, 2))
        )
        with pytest.raises(DataError):
            sgd_step(params, grads, lr=0.1, momentum=0.9)
        sgd_step(params, grads, lr=0.1, momentum=0.9, velocity=init_velocity(params))

    def test_training_separable_toy_set(self):
        rng = np.random.default_rng(8)
        n = 40
        x = np.vstack([rng.normal([-2, -2], 0.4, size=(n, 2)), rng.normal([2, 2], 0.4, size=(n, 2))])
        y = np.array([0] * n + [1] * n)
        params = init_network([2, 8, 2], ["relu", "softmax"], seed=4)
        opt = Sgd(lr=0.5, momentum=0.9)
        for _ in range(500):
            cache = forward(params, x)
            grads, _ = backward(params, cache, LossSpec("cross_entropy"), y)
            opt.step(params, grads)
        pred = forward(params, x).output.argmax(axis=1)
        assert np.mean(pred == y) == 1.0


class TestSerialization:
    def test_roundtrip_float32(self):
        params = init_network([3, 5, 2], ["relu", "softmax"], seed=6)
        blob = network_to_bytes(params)
        restored = network_from_bytes(blob)
        assert [l.activation for l in restored.layers] == ["relu", "softmax"]
        for orig, back in zip(params.layers, restored.layers):
            np.testing.assert_array_equal(back.weights, orig.weights.astype(np.float32).astype(np.float64))
            np.testing.assert_array_equal(back.biases, orig.biases.astype(np.float32).astype(np.float64))

    def test_roundtrip_stable_after_first_quantization(self):
        params = init_network([4, 3], ["identity"], seed=0)
        once = network_from_bytes(network_to_bytes(params))
        twice = network_from_bytes(network_to_bytes(once))
        np.testing.assert_array_equal(once.layers[0].weights, twice.layers[0].weights)

    def test_bad_magic_rejected(self):
        params = init_network([2, 2], ["identity"], seed=0)
        blob = bytearray(network_to_bytes(params))
        blob[0] ^= 0xFF
        with pytest.raises(DataError):
            network_from_bytes(bytes(blob))

    def test_truncated_rejected(self):
        params = init_network([2, 2], ["identity"], seed=0)
        blob = network_to_bytes(params)
        with pytest.raises(DataError):
            network_from_bytes(blob[:-3])
